"""Completion providers: a deterministic mock and a minimal HTTP client.

The mock provider's responses are pure functions of (request, seed). It
routes on template name so every prompt in the pipeline (classification,
judging, rewriting, article generation) gets a plausible, parseable reply.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Callable

import requests

from .gateway import (
    CompletionRequest,
    ProviderError,
    format_judge_score,
    stable_hash,
    token_overlap,
)

_FILLER_WORDS = (
    "support care steady gentle practice notice breathe ground pause reflect "
    "connect routine small step kind honest rest grow trust repair listen "
    "name feeling moment choice value habit plan reach talk share"
).split()


class MockProvider:
    """Seeded offline provider for tests and dry runs."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.id = f"mock-{seed}"
        self.calls = 0
        self.calls_by_template: dict[str, int] = {}
        self._lock = threading.Lock()

    def generate(self, request: CompletionRequest, prompt: str) -> str:
        with self._lock:
            self.calls += 1
            self.calls_by_template[request.template] = (
                self.calls_by_template.get(request.template, 0) + 1
            )
        if request.template == "classify_subtopics":
            return self._classify(request)
        if request.template == "usefulness_rubric":
            return self._judge(request)
        if request.template == "rewrite_query":
            return self._rewrite(request)
        if request.template == "generate_article":
            return self._article(request)
        digest = stable_hash(str(self.seed), request.template, prompt)
        return f"mock-response-{digest % 10**8:08d}"

    def _classify(self, request: CompletionRequest) -> str:
        subtopics = [s for s in request.bindings["subtopics"].splitlines() if s.strip()]
        text = request.bindings["text"]
        scored = []
        for position, subtopic in enumerate(subtopics):
            overlap = token_overlap(subtopic, text)
            if overlap > 0:
                scored.append((-overlap, position, subtopic))
        scored.sort()
        chosen = [s for _, _, s in scored[:3]]
        if not chosen:
            chosen = [subtopics[stable_hash(str(self.seed), text) % len(subtopics)]]
        weights = {1: [1.0], 2: [0.7, 0.3], 3: [0.7, 0.2, 0.1]}[len(chosen)]
        payload = {s: w for s, w in zip(chosen, weights)}
        lines = [json.dumps(payload, ensure_ascii=False)]
        lines.append(f"Primary subtopic: {chosen[0]}")
        return "\n".join(lines)

    def _judge(self, request: CompletionRequest) -> str:
        query = request.bindings["user_query"]
        doc_text = request.bindings["retrieved_document"]
        base = round(100 * token_overlap(query, doc_text))
        perturbation = stable_hash(str(self.seed), query, doc_text) % 7 - 3
        return format_judge_score(max(1, min(100, base + perturbation)))

    def _rewrite(self, request: CompletionRequest) -> str:
        query = request.bindings["query"].strip()
        return f"{query} coping strategies and support"

    def _article(self, request: CompletionRequest) -> str:
        meta = json.loads(request.bindings["metadata"])
        title = meta["title"]
        headers = meta.get("headers") or ["Overview"]
        target_words = int(meta["word_count"])
        out_title = f"Finding Your Way: {title}"
        out_headers = [f"{h} in Daily Life" for h in headers]
        fixed = len(out_title.split()) + sum(len(h.split()) for h in out_headers)
        body_budget = max(len(out_headers), target_words - fixed)
        per_section = body_budget // len(out_headers)
        leftover = body_budget - per_section * len(out_headers)
        lines = [f"# {out_title}"]
        for i, header in enumerate(out_headers):
            n_words = per_section + (1 if i < leftover else 0)
            start = stable_hash(str(self.seed), title, str(i))
            words = [
                _FILLER_WORDS[(start + j) % len(_FILLER_WORDS)] for j in range(n_words)
            ]
            lines.append(f"## {header}")
            lines.append(" ".join(words))
        return "\n".join(lines)


class HttpProvider:
    """OpenAI-style chat-completions client.

    Endpoint and credentials come from config/environment; the transport is
    injectable for tests. Transport failures raise ProviderError, which the
    gateway retries with backoff.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "CORPUSGAP_API_KEY",
        timeout: float = 60.0,
        transport: Callable[..., requests.Response] | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.id = f"http:{model}"
        self._post = transport or requests.post

    def generate(self, request: CompletionRequest, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": request.params.model if request.params.model != "mock" else self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        }
        try:
            response = self._post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"transport failure: {exc}") from exc
        if response.status_code >= 500:
            raise ProviderError(f"server error {response.status_code}")
        if response.status_code != 200:
            raise ProviderError(f"unexpected status {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
