"""Paralinguistic injection: annotate segments through a backend and render the enriched transcript.

Rendered line grammar (one line per segment)::

    <Caller|Operator>: <text>[ [<cue>, <cue>, ..., <affect summary>; Emotion: <e1> > <e2> ...]]
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Any, Iterable, Optional, Protocol, Sequence, Union

from .annotation import AnnotationError, ParalinguisticAnnotation, sanitize
from .corpus import Call, Segment
from .llm_client import BackendError, ChatCompletionsClient
from .resources import load_text

SPEAKER_TAGS = {"caller": "Caller", "operator": "Operator"}
_TAG_TO_SPEAKER = {v: k for k, v in SPEAKER_TAGS.items()}
EMOTION_MARK = "; Emotion: "

RawAnnotation = Union[ParalinguisticAnnotation, dict, None]


class EnrichmentError(RuntimeError):
    def __init__(self, call_id: str, segment_index: Optional[int], message: str):
        where = f"call {call_id}" + ("" if segment_index is None else f" segment {segment_index}")
        super().__init__(f"{where}: {message}")
        self.call_id = call_id
        self.segment_index = segment_index


class EnrichedParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class AnnotatorBackend(Protocol):
    def annotate(self, segments: Sequence[Segment], call_id: str = "") -> list[RawAnnotation]: ...


def _coerce(raw: RawAnnotation) -> Optional[ParalinguisticAnnotation]:
    if raw is None or isinstance(raw, ParalinguisticAnnotation):
        return raw
    if isinstance(raw, dict):
        cues = raw.get("cues") or []
        if isinstance(cues, str):
            cues = cues.split(",")
        ranking = raw.get("emotion_ranking") or []
        if isinstance(ranking, str):
            ranking = ranking.split(">")
        return ParalinguisticAnnotation.sanitized(cues, str(raw.get("affect_summary", "")), ranking)
    raise AnnotationError(f"unsupported annotation value {type(raw).__name__}")


def annotate_call(call: Call, backend: AnnotatorBackend) -> Call:
    """Return a copy of ``call`` with backend annotations attached.

    A null backend output leaves that segment's existing annotation in place.
    Nothing is returned on failure, so callers never see a half-annotated call.
    """
    try:
        raw = backend.annotate(call.segments, call_id=call.call_id)
    except BackendError as exc:
        raise EnrichmentError(call.call_id, exc.segment_index, str(exc)) from exc
    if len(raw) != len(call.segments):
        raise EnrichmentError(
            call.call_id, None, f"backend returned {len(raw)} annotations for {len(call.segments)} segments"
        )
    segments = []
    for i, (seg, item) in enumerate(zip(call.segments, raw)):
        try:
            ann = _coerce(item)
        except AnnotationError as exc:
            raise EnrichmentError(call.call_id, i, f"invalid annotation: {exc}") from exc
        segments.append(seg if ann is None else replace(seg, annotation=ann))
    return call.with_segments(segments)


def render_annotation(ann: ParalinguisticAnnotation) -> str:
    return f"[{', '.join(ann.cues)}, {ann.affect_summary}{EMOTION_MARK}{' > '.join(ann.emotion_ranking)}]"


def render_segment(seg: Segment, include_annotations: bool = True) -> str:
    line = f"{SPEAKER_TAGS[seg.speaker]}: {seg.text}"
    if include_annotations and seg.annotation is not None:
        line += " " + render_annotation(seg.annotation)
    return line


def render_segments(segments: Iterable[Segment], include_annotations: bool = True) -> str:
    return "\n".join(render_segment(s, include_annotations) for s in segments)


def render_enriched(call: Call, include_annotations: bool = True) -> str:
    """Enriched transcript of a call; ``include_annotations=False`` gives the raw transcript."""
    return render_segments(call.segments, include_annotations)


_LINE_RE = re.compile(r"^(Caller|Operator): (.*)$")
_BLOCK_RE = re.compile(r"^(?P<text>[^\[\]]*) \[(?P<block>[^\[\]]*)\]$")


def parse_annotation_block(block: str) -> ParalinguisticAnnotation:
    """Parse the inside of a ``[...]`` block (strict grammar)."""
    if block.count(EMOTION_MARK) != 1:
        raise AnnotationError("expected exactly one '; Emotion: ' separator")
    left, right = block.split(EMOTION_MARK)
    parts = left.split(", ")
    if len(parts) < 2:
        raise AnnotationError("expected '<cues>, <affect summary>' before the emotion ranking")
    return ParalinguisticAnnotation(tuple(parts[:-1]), parts[-1], tuple(right.split(" > ")))


def parse_enriched(text: str) -> list[tuple[str, str, Optional[ParalinguisticAnnotation]]]:
    """Inverse of :func:`render_enriched`: ``(speaker, text, annotation)`` per line."""
    out = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        m = _LINE_RE.match(line)
        if not m:
            raise EnrichedParseError(lineno, "expected '<Caller|Operator>: <text>'")
        speaker, body = _TAG_TO_SPEAKER[m.group(1)], m.group(2)
        annotation = None
        if "[" in body or "]" in body:
            bm = _BLOCK_RE.match(body)
            if not bm:
                raise EnrichedParseError(lineno, "malformed or unbalanced annotation block")
            body = bm.group("text")
            try:
                annotation = parse_annotation_block(bm.group("block"))
            except AnnotationError as exc:
                raise EnrichedParseError(lineno, f"bad annotation block: {exc}") from None
        if not body.strip():
            raise EnrichedParseError(lineno, "empty utterance text")
        out.append((speaker, body, annotation))
    return out


# --- backends ----------------------------------------------------------------


class NullAnnotator:
    """Annotates nothing."""

    def annotate(self, segments, call_id=""):
        return [None] * len(segments)


class FixedAnnotator:
    """Returns preset annotations by segment index (mock backend for tests and dry runs)."""

    def __init__(self, by_index: dict[int, RawAnnotation]):
        self.by_index = dict(by_index)

    def annotate(self, segments, call_id=""):
        return [self.by_index.get(i) for i in range(len(segments))]


_FENCE_RE = re.compile(r"^```(?:json)?\s*|\s*```$")
_LOOSE_BLOCK_RE = re.compile(r"\[([^\[\]]*;\s*Emotion:[^\[\]]*)\]")


def extract_annotation(content: str) -> Optional[ParalinguisticAnnotation]:
    """Parse a speech-model reply into an annotation.

    Accepted forms, tried in order: ``null``/``none``/empty; a JSON object with
    ``cues``, ``affect_summary``, ``emotion_ranking``; a bracket block in the
    rendered grammar (``[cue, ..., summary; Emotion: A > B]``). Strings are
    sanitized before validation.
    """
    body = _FENCE_RE.sub("", content.strip()).strip()
    if body.lower() in ("", "null", "none", "{}"):
        return None
    start, end = body.find("{"), body.rfind("}")
    if start != -1 and end > start:
        try:
            data = json.loads(body[start : end + 1])
        except json.JSONDecodeError:
            data = None
        if isinstance(data, dict) and "cues" in data:
            return _coerce(data)
    m = _LOOSE_BLOCK_RE.search(body)
    if m:
        left, _, right = m.group(1).partition(";")
        right = re.sub(r"^\s*Emotion:\s*", "", right)
        parts = [p.strip() for p in left.split(",") if p.strip()]
        if len(parts) >= 2:
            return ParalinguisticAnnotation.sanitized(parts[:-1], parts[-1], right.split(">"))
    raise AnnotationError(f"unparseable annotation reply: {content[:80]!r}")


class HttpAnnotatorBackend:
    """Speech-model annotator behind a chat-completions endpoint.

    One request per segment, at most ``max_in_flight`` concurrently; results are
    reassembled in segment order. With ``audio_uri_template`` set, each request
    names the segment audio (``{call_id}``, ``{index}``, ``{start_s}``, ``{end_s}``
    are substituted); otherwise only the transcript is sent.
    """

    def __init__(
        self,
        client: ChatCompletionsClient,
        *,
        prompt_template: Optional[str] = None,
        audio_uri_template: Optional[str] = None,
        speakers: Sequence[str] = ("caller",),
        max_in_flight: int = 4,
    ):
        self.client = client
        self.prompt_template = prompt_template or load_text("annotator_prompt_v1.txt")
        self.audio_uri_template = audio_uri_template
        self.speakers = tuple(speakers)
        self.max_in_flight = max(1, int(max_in_flight))

    def _prompt(self, seg: Segment, index: int, call_id: str) -> str:
        audio = "(not provided)"
        if self.audio_uri_template:
            audio = self.audio_uri_template.format(
                call_id=call_id, index=index, start_s=seg.start_s, end_s=seg.end_s
            )
        return (
            self.prompt_template.replace("{speaker}", SPEAKER_TAGS[seg.speaker])
            .replace("{audio}", audio)
            .replace("{text}", seg.text)
        )

    def _one(self, args: tuple[int, Segment, str]) -> Optional[ParalinguisticAnnotation]:
        index, seg, call_id = args
        if seg.speaker not in self.speakers:
            return None
        try:
            content = self.client.chat([{"role": "user", "content": self._prompt(seg, index, call_id)}])
            return extract_annotation(content)
        except (BackendError, AnnotationError) as exc:
            raise BackendError(str(exc), segment_index=index) from exc

    def annotate(self, segments: Sequence[Segment], call_id: str = "") -> list[Any]:
        jobs = [(i, s, call_id) for i, s in enumerate(segments)]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self._one, jobs))


__all__ = [
    "AnnotatorBackend",
    "EnrichedParseError",
    "EnrichmentError",
    "FixedAnnotator",
    "HttpAnnotatorBackend",
    "NullAnnotator",
    "ParalinguisticAnnotation",
    "annotate_call",
    "extract_annotation",
    "parse_annotation_block",
    "parse_enriched",
    "render_enriched",
    "render_segment",
    "render_segments",
    "sanitize",
]
