from __future__ import annotations

import pytest

from corpusgap.corpus import Document, Section, Source
from corpusgap.gateway import (
    CompletionRequest,
    Gateway,
    JudgeParseError,
    PromptTemplate,
    ProviderError,
    ProviderParams,
    TemplateError,
    format_judge_score,
    make_gateway_judge,
    make_gateway_rewriter,
    mock_judge,
    parse_judge_score,
    token_overlap,
)
from corpusgap.providers import MockProvider


def make_doc(doc_id: str, text: str) -> Document:
    return Document(
        id=doc_id, source=Source.BASELINE, title="", sections=(Section(heading="", body=text),)
    )


class TestPromptTemplate:
    def test_placeholders_extracted(self):
        template = PromptTemplate(name="t", body="Hello {name}, rate {thing}.")
        assert template.placeholders == ("name", "thing")

    def test_literal_braces_ignored(self):
        template = PromptTemplate(name="t", body='{"key": 0.7}\nuse {text} here')
        assert template.placeholders == ("text",)
        rendered = template.render({"text": "X"})
        assert '{"key": 0.7}' in rendered and "use X here" in rendered

    def test_unbound_placeholder_named(self):
        template = PromptTemplate(name="t", body="classify {text}")
        with pytest.raises(TemplateError, match="text"):
            template.render({})

    def test_unknown_binding_rejected(self):
        template = PromptTemplate(name="t", body="classify {text}")
        with pytest.raises(TemplateError, match="bogus"):
            template.render({"text": "x", "bogus": "y"})


class CountingProvider:
    def __init__(self, response: str = "ok"):
        self.id = "counting"
        self.calls = 0
        self.response = response

    def generate(self, request, prompt):
        self.calls += 1
        return self.response


class FlakyProvider:
    def __init__(self, failures: int, response: str = "ok"):
        self.id = "flaky"
        self.failures = failures
        self.calls = 0
        self.response = response

    def generate(self, request, prompt):
        self.calls += 1
        if self.calls <= self.failures:
            raise ProviderError("boom")
        return self.response


TEMPLATES = {"echo": PromptTemplate(name="echo", body="say {word}")}


def gw(provider, **kwargs) -> Gateway:
    kwargs.setdefault("templates", TEMPLATES)
    kwargs.setdefault("sleep", lambda s: None)
    return Gateway(provider, **kwargs)


def req(word: str = "hi") -> CompletionRequest:
    return CompletionRequest(template="echo", bindings={"word": word})


class TestGateway:
    def test_cache_hit_skips_provider(self):
        provider = CountingProvider()
        gateway = gw(provider)
        assert gateway.complete(req()) == "ok"
        assert gateway.complete(req()) == "ok"
        assert provider.calls == 1

    def test_distinct_params_miss_cache(self):
        provider = CountingProvider()
        gateway = gw(provider)
        gateway.complete(req())
        gateway.complete(
            CompletionRequest(
                template="echo",
                bindings={"word": "hi"},
                params=ProviderParams(temperature=0.9),
            )
        )
        assert provider.calls == 2

    def test_cache_persists_across_instances(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        first = CountingProvider()
        gw(first, cache_path=path).complete(req())
        second = CountingProvider()
        assert gw(second, cache_path=path).complete(req()) == "ok"
        assert second.calls == 0

    def test_cache_transparency(self):
        on = gw(CountingProvider("42"))
        off = gw(CountingProvider("42"), use_cache=False)
        request = req("score")
        assert on.complete_parsed(request, parse_judge_score) == off.complete_parsed(
            request, parse_judge_score
        )

    def test_retry_then_success(self):
        provider = FlakyProvider(failures=2)
        waits = []
        gateway = gw(provider, sleep=waits.append)
        assert gateway.complete(req()) == "ok"
        assert provider.calls == 3
        assert waits == [1.0, 2.0]

    def test_retries_exhausted_surface(self):
        provider = FlakyProvider(failures=5)
        gateway = gw(provider)
        with pytest.raises(ProviderError, match="after 3 attempts"):
            gateway.complete(req())

    def test_parse_failure_not_cached(self):
        provider = CountingProvider("no score here")
        gateway = gw(provider)
        with pytest.raises(JudgeParseError):
            gateway.complete_parsed(req(), parse_judge_score)
        with pytest.raises(JudgeParseError):
            gateway.complete_parsed(req(), parse_judge_score)
        assert provider.calls == 2
        assert len(gateway.cache) == 0

    def test_unbound_placeholder_surfaces(self):
        gateway = gw(CountingProvider())
        with pytest.raises(TemplateError, match="word"):
            gateway.complete(CompletionRequest(template="echo", bindings={}))


class TestMockProviderDeterminism:
    def test_same_seed_byte_identical(self):
        request = CompletionRequest(
            template="usefulness_rubric",
            bindings={"user_query": "a b", "retrieved_document": "a b c"},
        )
        first = MockProvider(seed=7).generate(request, "")
        second = MockProvider(seed=7).generate(request, "")
        assert first == second

    def test_seed_changes_response(self):
        request = CompletionRequest(
            template="usefulness_rubric",
            bindings={"user_query": "a b", "retrieved_document": "x y"},
        )
        outs = {MockProvider(seed=s).generate(request, "") for s in range(10)}
        assert len(outs) > 1


class TestParseJudgeScore:
    def test_bare_integer(self):
        assert parse_judge_score("87") == 87

    def test_labeled_line(self):
        assert parse_judge_score("Relevance Score (1-100): 92") == 92

    def test_labeled_line_en_dash(self):
        assert parse_judge_score("Relevance Score (1\u2013100): 92") == 92

    def test_out_of_range(self):
        with pytest.raises(JudgeParseError, match="outside"):
            parse_judge_score("150")

    def test_no_integer(self):
        with pytest.raises(JudgeParseError, match="no integer"):
            parse_judge_score("pretty helpful overall")

    def test_conflicting_integers(self):
        with pytest.raises(JudgeParseError, match="conflicting"):
            parse_judge_score("Score: 92 out of 100")

    @pytest.mark.parametrize("value", list(range(1, 101)))
    def test_format_parse_identity(self, value):
        assert parse_judge_score(format_judge_score(value)) == value
        assert parse_judge_score(str(value)) == value


class TestMockJudge:
    def test_identical_text_scores_high(self):
        text = "calm evening routine helps sleep"
        doc = make_doc("d1", text)
        assert mock_judge(text, doc, seed=0) >= 97

    def test_disjoint_text_scores_low(self):
        doc = make_doc("d1", "gamma delta epsilon")
        assert mock_judge("alpha beta", doc, seed=0) <= 4

    def test_deterministic(self):
        doc = make_doc("d1", "a b c d")
        assert mock_judge("a b", doc, seed=3) == mock_judge("a b", doc, seed=3)

    def test_always_in_range(self):
        for seed in range(20):
            doc = make_doc("d1", "x")
            assert 1 <= mock_judge("y z", doc, seed) <= 100

    def test_overlap_counts_multiplicity(self):
        assert token_overlap("a a b", "a b c") == pytest.approx(2 / 3)
        assert token_overlap("a a b", "a a a b") == 1.0


class TestGatewayJudgeAndRewriter:
    def test_judge_parses_mock_response(self):
        gateway = Gateway(MockProvider(seed=0), sleep=lambda s: None)
        judge = make_gateway_judge(gateway)
        doc = make_doc("d1", "breathing exercise for panic")
        score = judge("breathing exercise for panic", doc)
        assert score >= 97

    def test_rewriter_returns_single_line(self):
        gateway = Gateway(MockProvider(seed=0), sleep=lambda s: None)
        rewriter = make_gateway_rewriter(gateway)
        out = rewriter("cant sleep, mind racing")
        assert "\n" not in out and out
