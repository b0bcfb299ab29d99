"""Single abstraction over all text-model calls.

Prompt templates are data files with {placeholder} syntax. Responses are
cached in an append-only line-delimited file keyed by (template, bindings,
provider params); identical requests never hit the provider twice. A
deterministic mock provider serves tests and offline runs.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Protocol, TypeVar

from .corpus import Document

JUDGE_MIN = 1
JUDGE_MAX = 100

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class TemplateError(ValueError):
    """Placeholder/binding mismatch."""


class ProviderError(RuntimeError):
    """Transport-level provider failure; the gateway retries these."""


class JudgeParseError(ValueError):
    """Judge response did not contain a single in-range integer."""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    placeholders: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        found = tuple(sorted(set(_PLACEHOLDER_RE.findall(self.body))))
        object.__setattr__(self, "placeholders", found)

    def render(self, bindings: Mapping[str, str]) -> str:
        missing = [p for p in self.placeholders if p not in bindings]
        if missing:
            raise TemplateError(
                f"template {self.name!r}: unbound placeholder(s) {', '.join(missing)}"
            )
        extra = [b for b in bindings if b not in self.placeholders]
        if extra:
            raise TemplateError(
                f"template {self.name!r}: unknown binding(s) {', '.join(sorted(extra))}"
            )
        return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), self.body)


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load all *.txt templates from a directory (default: packaged prompts)."""
    templates: dict[str, PromptTemplate] = {}
    if directory is None:
        package = resources.files("corpusgap") / "prompts"
        entries = [(p.name, p.read_text(encoding="utf-8")) for p in package.iterdir() if p.name.endswith(".txt")]
    else:
        entries = [(p.name, p.read_text(encoding="utf-8")) for p in sorted(Path(directory).glob("*.txt"))]
    for filename, body in sorted(entries):
        name = filename[: -len(".txt")]
        templates[name] = PromptTemplate(name=name, body=body)
    return templates


@dataclass(frozen=True)
class ProviderParams:
    model: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 2048


@dataclass(frozen=True)
class CompletionRequest:
    template: str
    bindings: Mapping[str, str]
    params: ProviderParams = ProviderParams()

    def cache_key(self) -> str:
        payload = json.dumps(
            {
                "template": self.template,
                "bindings": dict(sorted(self.bindings.items())),
                "params": [self.params.model, self.params.temperature, self.params.max_output_tokens],
            },
            ensure_ascii=False,
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Provider(Protocol):
    id: str

    def generate(self, request: CompletionRequest, prompt: str) -> str: ...


def stable_hash(*parts: str) -> int:
    """Deterministic cross-platform hash of the joined parts."""
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return int(digest, 16)


class ResponseCache:
    """Append-only completion cache backed by an optional JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    self._entries[entry["key"]] = entry["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, request: CompletionRequest, response: str, parsed=None) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            if self.path is not None:
                entry = {
                    "key": key,
                    "template": request.template,
                    "response": response,
                    "parsed": parsed,
                    "timestamp": time.time(),
                }
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True))
                    fh.write("\n")


T = TypeVar("T")


class Gateway:
    """Routes completion requests through templating, caching, and retries.

    Safe for concurrent callers; at most `max_inflight` provider calls run
    at once. Transport failures are retried with exponential backoff
    (3 attempts, base 1 s) and then surfaced.
    """

    def __init__(
        self,
        provider: Provider,
        templates: dict[str, PromptTemplate] | None = None,
        cache_path: str | Path | None = None,
        max_inflight: int = 4,
        retries: int = 3,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        use_cache: bool = True,
    ):
        self.provider = provider
        self.templates = templates if templates is not None else load_templates()
        self.cache = ResponseCache(cache_path)
        self.use_cache = use_cache
        self.max_inflight = max_inflight
        self.retries = retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._semaphore = threading.Semaphore(max_inflight)

    def template(self, name: str) -> PromptTemplate:
        try:
            return self.templates[name]
        except KeyError:
            raise TemplateError(f"unknown template {name!r}") from None

    def _call_provider(self, request: CompletionRequest, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._semaphore:
                    return self.provider.generate(request, prompt)
            except ProviderError as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    self._sleep(self.backoff_base * 2**attempt)
        raise ProviderError(
            f"provider {self.provider.id!r} failed after {self.retries} attempts: {last_error}"
        )

    def complete(self, request: CompletionRequest) -> str:
        """Return the provider response, serving repeats from the cache."""
        prompt = self.template(request.template).render(request.bindings)
        key = request.cache_key()
        if self.use_cache:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        response = self._call_provider(request, prompt)
        if self.use_cache:
            self.cache.put(key, request, response)
        return response

    def complete_parsed(self, request: CompletionRequest, parser: Callable[[str], T]) -> T:
        """Complete and parse; only responses that parse are cached.

        A malformed response is surfaced without being cached, so a re-run
        reaches the provider again instead of replaying the bad response.
        """
        prompt = self.template(request.template).render(request.bindings)
        key = request.cache_key()
        if self.use_cache:
            cached = self.cache.get(key)
            if cached is not None:
                return parser(cached)
        response = self._call_provider(request, prompt)
        parsed = parser(response)
        if self.use_cache:
            jsonable = parsed if isinstance(parsed, (int, float, str, list, dict)) else None
            self.cache.put(key, request, response, parsed=jsonable)
        return parsed


# --- judge scores ----------------------------------------------------------

_LABELED_SCORE_RE = re.compile(
    r"relevance\s+score\s*\(\s*1\s*[-\u2013\u2014]\s*100\s*\)\s*:\s*(\d+)", re.IGNORECASE
)
_INT_RE = re.compile(r"\d+")


def parse_judge_score(raw: str) -> int:
    """Extract the single 1..100 integer from a usefulness-rubric response.

    Accepts a bare integer or the labeled output line. Anything ambiguous
    is an error rather than a guess; a misparse here would corrupt gap
    scores downstream.
    """
    text = raw.strip()
    labeled = _LABELED_SCORE_RE.findall(text)
    if len(labeled) == 1:
        value = int(labeled[0])
    elif len(labeled) > 1 and len(set(labeled)) == 1:
        value = int(labeled[0])
    elif len(labeled) > 1:
        raise JudgeParseError(f"conflicting labeled scores in response: {text[:200]!r}")
    else:
        found = _INT_RE.findall(text)
        if not found:
            raise JudgeParseError(f"no integer found in response: {text[:200]!r}")
        if len(set(found)) != 1:
            raise JudgeParseError(f"multiple conflicting integers in response: {text[:200]!r}")
        value = int(found[0])
    if not JUDGE_MIN <= value <= JUDGE_MAX:
        raise JudgeParseError(f"score {value} outside [{JUDGE_MIN}, {JUDGE_MAX}]")
    return value


def format_judge_score(value: int) -> str:
    return f"Relevance Score (1-100): {value}"


def _token_counts(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for token in re.findall(r"\w+", text.lower()):
        counts[token] = counts.get(token, 0) + 1
    return counts


def token_overlap(query_text: str, doc_text: str) -> float:
    """Multiset containment of query tokens in the document, in [0, 1]."""
    query_counts = _token_counts(query_text)
    total = sum(query_counts.values())
    if total == 0:
        return 0.0
    doc_counts = _token_counts(doc_text)
    matched = sum(min(n, doc_counts.get(tok, 0)) for tok, n in query_counts.items())
    return matched / total


def mock_judge(query_text: str, doc: Document, seed: int) -> int:
    """Deterministic stand-in judge: scaled token overlap with a small
    seed-keyed perturbation in [-3, 3], clamped to [1, 100]."""
    base = round(100 * token_overlap(query_text, doc.text))
    perturbation = stable_hash(str(seed), query_text, doc.id) % 7 - 3
    return max(JUDGE_MIN, min(JUDGE_MAX, base + perturbation))


JudgeFn = Callable[[str, Document], int]


def make_mock_judge(seed: int) -> JudgeFn:
    def judge(query_text: str, doc: Document) -> int:
        return mock_judge(query_text, doc, seed)

    return judge


def make_gateway_judge(gateway: Gateway, params: ProviderParams | None = None) -> JudgeFn:
    """Judge that applies the usefulness rubric through the gateway.

    Cached by (query text, document text) via the gateway cache, so
    re-judging a pair is free.
    """
    params = params or ProviderParams()

    def judge(query_text: str, doc: Document) -> int:
        request = CompletionRequest(
            template="usefulness_rubric",
            bindings={"user_query": query_text, "retrieved_document": doc.text},
            params=params,
        )
        return gateway.complete_parsed(request, parse_judge_score)

    return judge


RewriteFn = Callable[[str], str]


def _parse_rewrite(raw: str) -> str:
    for line in raw.splitlines():
        if line.strip():
            return line.strip()
    raise ValueError("rewriter returned empty output")


def make_gateway_rewriter(gateway: Gateway, params: ProviderParams | None = None) -> RewriteFn:
    params = params or ProviderParams()

    def rewrite(query_text: str) -> str:
        request = CompletionRequest(
            template="rewrite_query",
            bindings={"query": query_text},
            params=params,
        )
        return gateway.complete_parsed(request, _parse_rewrite)

    return rewrite
