import json
from pathlib import Path

import httpx
import pytest

from crisistriage.annotation import AnnotationError, ParalinguisticAnnotation
from crisistriage.corpus import Call, Segment
from crisistriage.enrichment import (
    EnrichedParseError,
    EnrichmentError,
    FixedAnnotator,
    HttpAnnotatorBackend,
    NullAnnotator,
    annotate_call,
    extract_annotation,
    parse_enriched,
    render_enriched,
    render_segment,
)
from crisistriage.llm_client import BackendError, ChatCompletionsClient

FIXTURES = Path(__file__).parent / "fixtures"


def test_render_with_annotations(annotation):
    seg = Segment("caller", 0.0, 4.0, "the rent is due and I have nothing left", annotation)
    assert render_segment(seg) == (
        "Caller: the rent is due and I have nothing left "
        "[shaky breathing, quiet voice, long pauses, sounding worn out; Emotion: Sadness > Fear]"
    )


def test_render_without_annotations(annotation):
    seg = Segment("caller", 0.0, 4.0, "the rent is due and I have nothing left", annotation)
    assert render_segment(seg, include_annotations=False) == "Caller: the rent is due and I have nothing left"


def test_render_operator_unannotated():
    assert render_segment(Segment("operator", 0, 1, "go on")) == "Operator: go on"


def test_roundtrip(annotation, small_corpus):
    call = Call("x", 0, (Segment("operator", 0, 2, "hello there"), Segment("caller", 2, 5, "hi", annotation)))
    parsed = parse_enriched(render_enriched(call))
    assert parsed == [("operator", "hello there", None), ("caller", "hi", annotation)]
    for c in small_corpus:
        parsed = parse_enriched(render_enriched(c))
        assert [(s.speaker, s.text, s.annotation) for s in c.segments] == parsed


def test_unbalanced_bracket_reports_line():
    text = "Operator: hello\nCaller: help [quiet voice, tense; Emotion: Fear"
    with pytest.raises(EnrichedParseError) as exc:
        parse_enriched(text)
    assert exc.value.lineno == 2


def test_bad_speaker_tag_reports_line():
    with pytest.raises(EnrichedParseError) as exc:
        parse_enriched("Caller: a\nCaller: b\nNurse: c")
    assert exc.value.lineno == 3


def test_null_backend_is_identity(small_corpus, annotation):
    for c in small_corpus[:5]:
        assert annotate_call(c, NullAnnotator()) == c
    bare = Call("b", 1, (Segment("caller", 0, 1, "x"),))
    assert annotate_call(bare, NullAnnotator()) == bare
    once = annotate_call(bare, FixedAnnotator({0: annotation}))
    assert annotate_call(once, NullAnnotator()) == once
    assert once.segments[0].annotation == annotation


def test_backend_output_sanitized():
    call = Call("b", 1, (Segment("caller", 0, 1, "x"),))
    out = annotate_call(call, FixedAnnotator({0: {"cues": ["loud; [harsh]"], "affect_summary": "angry>", "emotion_ranking": ["Anger"]}}))
    ann = out.segments[0].annotation
    assert ann.cues == ("loud/ /harsh/",) and ann.affect_summary == "angry/"
    assert parse_enriched(render_enriched(out))[0][2] == ann


def test_wrong_length_backend_raises():
    class Short:
        def annotate(self, segments, call_id=""):
            return []

    call = Call("b", 1, (Segment("caller", 0, 1, "x"),))
    with pytest.raises(EnrichmentError, match="call b"):
        annotate_call(call, Short())


def test_reserved_chars_rejected_directly():
    with pytest.raises(AnnotationError):
        ParalinguisticAnnotation(("a>b",), "s", ("E",))


def test_extract_forms():
    assert extract_annotation("null") is None
    a = extract_annotation("[soft voice, sounding calm; Emotion: Calm > Relief]")
    assert a == ParalinguisticAnnotation(("soft voice",), "sounding calm", ("Calm", "Relief"))
    with pytest.raises(AnnotationError):
        extract_annotation("I could not hear anything useful")


# --- HTTP backend replayed from recorded fixtures ---------------------------


def _replay_transport(seen):
    replies = json.loads((FIXTURES / "annotator_replay.json").read_text())["replies"]

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        seen.append((request, body))
        prompt = body["messages"][-1]["content"]
        for key, content in replies.items():
            if key in prompt:
                return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})
        return httpx.Response(404, text="no recording")

    return httpx.MockTransport(handler)


def _call():
    return Call("rec1", 1, (
        Segment("caller", 0, 3, "i cannot sleep anymore"),
        Segment("operator", 3, 5, "that sounds hard"),
        Segment("caller", 5, 9, "my sister stopped calling"),
        Segment("caller", 9, 10, "thanks for listening"),
    ))


def test_http_annotator_replay(monkeypatch):
    monkeypatch.setenv("TRIAGE_BACKEND_TOKEN", "tok-from-env")
    seen = []
    client = ChatCompletionsClient("http://replay.test/v1", transport=_replay_transport(seen), max_retries=0)
    backend = HttpAnnotatorBackend(client, audio_uri_template="file://{call_id}/{index}.wav", max_in_flight=3)
    out = annotate_call(_call(), backend)
    anns = [s.annotation for s in out.segments]
    assert anns[0] == ParalinguisticAnnotation(("flat voice", "slow speech"), "sounding drained", ("Sadness", "Fatigue"))
    assert anns[1] is None  # operator segments are not sent
    assert anns[2] == ParalinguisticAnnotation(("trembling voice", "sniffling"), "sounding lonely", ("Sadness", "Loneliness"))
    assert anns[3] is None
    assert len(seen) == 3
    assert all(r.headers["Authorization"] == "Bearer tok-from-env" for r, _ in seen)
    assert all(str(r.url) == "http://replay.test/v1/chat/completions" for r, _ in seen)
    assert any("file://rec1/2.wav" in b["messages"][-1]["content"] for _, b in seen)


def test_http_failure_names_call_and_segment(monkeypatch):
    monkeypatch.delenv("TRIAGE_BACKEND_TOKEN", raising=False)
    call = Call("rec2", 0, (Segment("caller", 0, 1, "i cannot sleep anymore"), Segment("caller", 1, 2, "unrecorded line")))
    client = ChatCompletionsClient("http://replay.test/v1", transport=_replay_transport([]), max_retries=0)
    with pytest.raises(EnrichmentError) as exc:
        annotate_call(call, HttpAnnotatorBackend(client))
    assert exc.value.call_id == "rec2" and exc.value.segment_index == 1


def test_retry_then_success(monkeypatch):
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    client = ChatCompletionsClient("http://x.test", transport=httpx.MockTransport(handler), max_retries=3, backoff_s=0.0)
    assert client.chat([{"role": "user", "content": "hi"}]) == "ok"
    assert len(attempts) == 3


def test_retries_exhausted():
    client = ChatCompletionsClient("http://x.test", transport=httpx.MockTransport(lambda r: httpx.Response(429)),
                                   max_retries=1, backoff_s=0.0)
    with pytest.raises(BackendError, match="2 attempts"):
        client.chat([])


def test_url_from_environment_only(monkeypatch):
    monkeypatch.delenv("TRIAGE_BACKEND_URL", raising=False)
    with pytest.raises(BackendError, match="TRIAGE_BACKEND_URL"):
        ChatCompletionsClient()
    monkeypatch.setenv("TRIAGE_BACKEND_URL", "http://env.test/v1/")
    assert ChatCompletionsClient().base_url == "http://env.test/v1"
