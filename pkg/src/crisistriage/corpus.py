"""Hotline call data model with JSONL ingestion; corpus statistics and a seeded synthetic generator.

A corpus file holds one call per line::

    {"call_id": "c001", "label": 2, "age": 23, "gender": "F",
     "segments": [{"speaker": "caller", "start_s": 0.0, "end_s": 4.2,
                   "text": "...", "annotation": null}]}
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .annotation import AnnotationError, ParalinguisticAnnotation

LABELS = (0, 1, 2)
LABEL_NAMES = {0: "no crisis", 1: "low crisis", 2: "medium-to-high crisis"}
SPEAKERS = ("caller", "operator")
GENDERS = ("M", "F")


class CorpusError(ValueError):
    """Raised for malformed records or calls violating the data model."""


@dataclass(frozen=True)
class Segment:
    speaker: str
    start_s: float
    end_s: float
    text: str
    annotation: Optional[ParalinguisticAnnotation] = None

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict[str, Any]:
        return {
            "speaker": self.speaker,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "text": self.text,
            "annotation": None if self.annotation is None else self.annotation.to_dict(),
        }


@dataclass(frozen=True)
class Call:
    call_id: str
    label: int
    segments: tuple[Segment, ...]
    age: Optional[int] = None
    gender: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def duration_s(self) -> float:
        return self.segments[-1].end_s - self.segments[0].start_s

    def with_segments(self, segments: Iterable[Segment]) -> "Call":
        return replace(self, segments=tuple(segments))

    def to_dict(self) -> dict[str, Any]:
        return {
            "call_id": self.call_id,
            "label": self.label,
            "age": self.age,
            "gender": self.gender,
            "segments": [s.to_dict() for s in self.segments],
        }


def validate_label(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value not in LABELS:
        raise CorpusError(f"label must be one of 0, 1, 2; got {value!r}")
    return value


def validate_call(call: Call) -> None:
    """Raise CorpusError if ``call`` breaks any Segment/Call invariant."""
    cid = call.call_id
    if not isinstance(cid, str) or not cid:
        raise CorpusError("call_id must be a non-empty string")
    try:
        validate_label(call.label)
    except CorpusError as exc:
        raise CorpusError(f"call {cid}: {exc}") from None
    if call.age is not None and (isinstance(call.age, bool) or not isinstance(call.age, int) or call.age < 0):
        raise CorpusError(f"call {cid}: age must be a non-negative integer or null")
    if call.gender is not None and call.gender not in GENDERS:
        raise CorpusError(f"call {cid}: gender must be 'M', 'F' or null")
    if not call.segments:
        raise CorpusError(f"call {cid}: no segments")
    prev_end = None
    for i, seg in enumerate(call.segments):
        where = f"call {cid} segment {i}"
        if seg.speaker not in SPEAKERS:
            raise CorpusError(f"{where}: speaker must be 'caller' or 'operator'")
        for name in ("start_s", "end_s"):
            v = getattr(seg, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise CorpusError(f"{where}: {name} must be a finite number")
        if seg.start_s < 0:
            raise CorpusError(f"{where}: start_s < 0")
        if not seg.end_s > seg.start_s:
            raise CorpusError(f"{where}: end_s ({seg.end_s}) must exceed start_s ({seg.start_s})")
        if not isinstance(seg.text, str) or not seg.text.strip():
            raise CorpusError(f"{where}: empty text")
        if "\n" in seg.text or "\r" in seg.text:
            raise CorpusError(f"{where}: text must be a single line")
        if "[" in seg.text or "]" in seg.text:
            raise CorpusError(f"{where}: text may not contain '[' or ']' (reserved for annotations)")
        if seg.annotation is not None and not isinstance(seg.annotation, ParalinguisticAnnotation):
            raise CorpusError(f"{where}: bad annotation type")
        if prev_end is not None and seg.start_s < prev_end:
            raise CorpusError(f"{where}: overlaps or precedes previous segment")
        prev_end = seg.end_s


def _segment_from_dict(data: Any, where: str) -> Segment:
    if not isinstance(data, dict):
        raise CorpusError(f"{where}: segment must be an object")
    unknown = set(data) - {"speaker", "start_s", "end_s", "text", "annotation"}
    if unknown:
        raise CorpusError(f"{where}: unknown segment fields {sorted(unknown)}")
    for key in ("speaker", "start_s", "end_s", "text"):
        if key not in data:
            raise CorpusError(f"{where}: missing field '{key}'")
    ann = data.get("annotation")
    try:
        annotation = None if ann is None else ParalinguisticAnnotation.from_dict(ann)
    except AnnotationError as exc:
        raise CorpusError(f"{where}: field 'annotation': {exc}") from None
    start, end = data["start_s"], data["end_s"]
    for key, v in (("start_s", start), ("end_s", end)):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise CorpusError(f"{where}: field '{key}' must be a number")
    return Segment(data["speaker"], float(start), float(end), data["text"], annotation)


def call_from_dict(data: Any, where: str = "record") -> Call:
    if not isinstance(data, dict):
        raise CorpusError(f"{where}: record must be a JSON object")
    unknown = set(data) - {"call_id", "label", "age", "gender", "segments"}
    if unknown:
        raise CorpusError(f"{where}: unknown fields {sorted(unknown)}")
    for key in ("call_id", "label", "segments"):
        if key not in data:
            raise CorpusError(f"{where}: missing field '{key}'")
    if not isinstance(data["segments"], list):
        raise CorpusError(f"{where}: field 'segments' must be a list")
    segments = tuple(
        _segment_from_dict(s, f"{where} field 'segments[{i}]'") for i, s in enumerate(data["segments"])
    )
    call = Call(
        call_id=data["call_id"],
        label=data["label"],
        segments=segments,
        age=data.get("age"),
        gender=data.get("gender"),
    )
    try:
        validate_call(call)
    except CorpusError as exc:
        raise CorpusError(f"{where}: {exc}") from None
    return call


def parse_corpus_lines(lines: Iterable[str], source: str = "<corpus>") -> list[Call]:
    calls: list[Call] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
        call = call_from_dict(data, where)
        if call.call_id in seen:
            raise CorpusError(
                f"{where}: duplicate call_id {call.call_id!r} (first seen on line {seen[call.call_id]})"
            )
        seen[call.call_id] = lineno
        calls.append(call)
    return calls


def parse_corpus(path: str | Path) -> list[Call]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_corpus_lines(fh, source=str(path))


def serialize_corpus(calls: Iterable[Call]) -> str:
    return "".join(json.dumps(c.to_dict(), ensure_ascii=False) + "\n" for c in calls)


def write_corpus(calls: Iterable[Call], path: str | Path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, serialize_corpus(calls))


@dataclass(frozen=True)
class CorpusStats:
    n_calls: int
    label_histogram: dict[int, int]
    mean_duration_min: float
    std_duration_min: float
    age_histogram: dict[int, int]
    gender_counts: dict[str, int]
    missing_age: int
    missing_gender: int
    total_duration_h: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_calls": self.n_calls,
            "label_histogram": {str(k): v for k, v in self.label_histogram.items()},
            "mean_duration_min": self.mean_duration_min,
            "std_duration_min": self.std_duration_min,
            "age_histogram": {str(k): v for k, v in self.age_histogram.items()},
            "gender_counts": dict(self.gender_counts),
            "missing_age": self.missing_age,
            "missing_gender": self.missing_gender,
            "total_duration_h": self.total_duration_h,
        }


def corpus_stats(calls: Sequence[Call], age_bin: int = 5) -> CorpusStats:
    """Label/duration/demographic overview; durations in minutes, std is population."""
    if not calls:
        raise CorpusError("cannot compute statistics of an empty corpus")
    durations = np.array([c.duration_s / 60.0 for c in calls], dtype=float)
    labels = Counter(c.label for c in calls)
    ages = [c.age for c in calls if c.age is not None]
    age_hist = Counter((a // age_bin) * age_bin for a in ages)
    genders = Counter(c.gender for c in calls if c.gender is not None)
    return CorpusStats(
        n_calls=len(calls),
        label_histogram={lab: labels.get(lab, 0) for lab in LABELS},
        mean_duration_min=float(durations.mean()),
        std_duration_min=float(durations.std()),
        age_histogram=dict(sorted(age_hist.items())),
        gender_counts={g: genders.get(g, 0) for g in GENDERS},
        missing_age=len(calls) - len(ages),
        missing_gender=len(calls) - sum(genders.values()),
        total_duration_h=float(durations.sum() / 60.0),
    )


# --- synthetic corpus ------------------------------------------------------

FILLER_WORDS = (
    "i", "you", "it", "was", "and", "the", "just", "really", "think", "know", "then", "so",
    "my", "with", "about", "have", "been", "day", "week", "time", "again", "people", "talk",
    "feel", "like", "maybe", "today", "yesterday", "home", "work", "went", "said", "told",
    "because", "when", "after", "before", "some", "thing", "things", "lot", "still", "also",
    "well", "right", "mean", "what", "there", "much", "little", "sometimes", "always",
)
TOPIC_WORDS = (
    "school", "dorm", "exam", "job", "boss", "mother", "father", "sister", "brother",
    "boyfriend", "girlfriend", "rent", "money", "roommate", "teacher", "classes", "phone",
    "city", "village", "hospital", "doctor", "friend", "marriage", "divorce", "wedding",
    "internship", "thesis", "landlord", "neighbour", "colleague", "company", "debt",
)
OPERATOR_PHRASES = (
    "can you tell me more about that",
    "how have you been sleeping lately",
    "i am here and listening to you",
    "what happened after that",
    "who else knows how you are feeling",
    "that sounds very hard for you",
    "what would help you right now",
    "thank you for telling me this",
)
LEXICAL_MARKERS = {
    0: ("managing", "coping", "routine", "okay-overall"),
    1: ("struggling", "exhausted", "overwhelmed", "stuck"),
    2: ("hopeless", "unbearable", "worthless", "giving-up"),
}
CUE_POOLS = {
    0: {
        "cues": ("steady voice", "relaxed breathing", "light laughter", "even pace"),
        "summary": ("expressing mild concern", "sounding composed"),
        "emotions": ("Calm", "Worry"),
    },
    1: {
        "cues": ("repeated sighing", "slow speech", "flat tone", "long pauses"),
        "summary": ("expressing frustration and fatigue", "sounding discouraged"),
        "emotions": ("Frustration", "Anxiety"),
    },
    2: {
        "cues": ("shaking voice", "heavy crying", "barely audible", "choked breathing"),
        "summary": ("sounding hopeless and overwhelmed", "sounding desperate"),
        "emotions": ("Sadness", "Fear"),
    },
}
NEUTRAL_POOL = {
    "cues": ("normal volume", "moderate pace", "clear articulation"),
    "summary": ("no marked affect",),
    "emotions": ("Neutral",),
}


@dataclass(frozen=True)
class SignalSpec:
    """Where the label lives in a synthetic corpus.

    ``mode`` is ``lexical`` (marker words in caller text), ``cue`` (label-specific
    paralinguistic annotations only) or ``mixed`` (each signal segment carries one
    or both). ``signal_rate`` is the chance a caller segment carries signal; every
    call gets at least one signal segment.
    """

    mode: str = "mixed"
    signal_rate: float = 0.4
    duration_min: tuple[float, float] = (12.0, 4.0)
    min_duration_min: float = 3.0
    segment_s: tuple[float, float] = (15.0, 45.0)
    words_per_segment: tuple[int, int] = (6, 14)
    neutral_annotation_rate: float = 0.5
    topic_words_per_call: int = 3

    def __post_init__(self) -> None:
        if self.mode not in ("lexical", "cue", "mixed"):
            raise ValueError(f"unknown signal mode {self.mode!r}")
        if not 0.0 <= self.signal_rate <= 1.0:
            raise ValueError("signal_rate must be in [0, 1]")
        if self.segment_s[0] <= 0 or self.segment_s[1] < self.segment_s[0]:
            raise ValueError("segment_s must be a positive (lo, hi) range")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "signal_rate": self.signal_rate,
            "duration_min": list(self.duration_min),
            "min_duration_min": self.min_duration_min,
            "segment_s": list(self.segment_s),
            "words_per_segment": list(self.words_per_segment),
            "neutral_annotation_rate": self.neutral_annotation_rate,
            "topic_words_per_call": self.topic_words_per_call,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SignalSpec":
        kwargs = dict(data)
        for key in ("duration_min", "segment_s", "words_per_segment"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


# Long calls whose label surfaces in only a few utterances.
LONG_SPARSE_SPEC = SignalSpec(
    mode="mixed", signal_rate=0.2, duration_min=(60.0, 5.0), min_duration_min=45.0
)


def _pick(rng: np.random.Generator, pool: Sequence[str]) -> str:
    return pool[int(rng.integers(len(pool)))]


def _annotation_from_pool(rng: np.random.Generator, pool: dict) -> ParalinguisticAnnotation:
    n_cues = int(rng.integers(1, min(3, len(pool["cues"])) + 1))
    cue_idx = rng.choice(len(pool["cues"]), size=n_cues, replace=False)
    emotions = list(pool["emotions"])
    order = rng.permutation(len(emotions))
    n_emo = int(rng.integers(1, len(emotions) + 1))
    return ParalinguisticAnnotation(
        cues=tuple(pool["cues"][int(i)] for i in sorted(cue_idx)),
        affect_summary=_pick(rng, pool["summary"]),
        emotion_ranking=tuple(emotions[int(i)] for i in order[:n_emo]),
    )


def _synth_call(rng: np.random.Generator, call_id: str, label: int, spec: SignalSpec) -> Call:
    mean_min, std_min = spec.duration_min
    target_s = 60.0 * max(spec.min_duration_min, float(rng.normal(mean_min, std_min)))
    topics = [
        TOPIC_WORDS[int(i)]
        for i in rng.choice(len(TOPIC_WORDS), size=spec.topic_words_per_call, replace=False)
    ]
    plan: list[tuple[str, float, float]] = []
    t = 0.0
    speaker = "operator"
    while t < target_s:
        dur = round(float(rng.uniform(*spec.segment_s)), 2)
        plan.append((speaker, round(t, 2), round(t + dur, 2)))
        t = round(t + dur + float(rng.uniform(0.2, 1.5)), 2)
        if rng.random() < 0.8:
            speaker = "caller" if speaker == "operator" else "operator"
    caller_idx = [i for i, (spk, _, _) in enumerate(plan) if spk == "caller"]
    if not caller_idx:
        plan[-1] = ("caller",) + plan[-1][1:]
        caller_idx = [len(plan) - 1]
    signal = {i for i in caller_idx if rng.random() < spec.signal_rate}
    if not signal:
        signal.add(caller_idx[int(rng.integers(len(caller_idx)))])

    segments = []
    for i, (spk, start, end) in enumerate(plan):
        annotation = None
        if spk == "operator":
            text = _pick(rng, OPERATOR_PHRASES)
        else:
            n_words = int(rng.integers(spec.words_per_segment[0], spec.words_per_segment[1] + 1))
            words = [_pick(rng, FILLER_WORDS) for _ in range(n_words)]
            if topics and rng.random() < 0.5:
                words.insert(int(rng.integers(len(words) + 1)), _pick(rng, topics))
            lexical = cue = False
            if i in signal:
                if spec.mode == "lexical":
                    lexical = True
                elif spec.mode == "cue":
                    cue = True
                else:
                    kind = int(rng.integers(3))
                    lexical, cue = kind != 1, kind != 0
            if lexical:
                words.insert(int(rng.integers(len(words) + 1)), _pick(rng, LEXICAL_MARKERS[label]))
            if cue:
                annotation = _annotation_from_pool(rng, CUE_POOLS[label])
            elif rng.random() < spec.neutral_annotation_rate:
                annotation = _annotation_from_pool(rng, NEUTRAL_POOL)
            text = " ".join(words)
        segments.append(Segment(spk, start, end, text, annotation))
    return Call(call_id=call_id, label=label, segments=tuple(segments))


def generate_synthetic_corpus(
    seed: int,
    n_calls: int,
    signal_spec: SignalSpec | None = None,
    *,
    k: int = 5,
    label_counts: Sequence[int] | None = None,
) -> list[Call]:
    """Deterministic corpus whose labels are planted per ``signal_spec``.

    Labels are balanced (or follow ``label_counts``) so every class has at least
    ``k`` calls for stratified k-fold evaluation.
    """
    spec = signal_spec or SignalSpec()
    if label_counts is None:
        if n_calls < 3 * k:
            raise CorpusError(f"n_calls={n_calls} too small for {k}-fold stratification (need >= {3 * k})")
        label_counts = [n_calls // 3 + (1 if lab < n_calls % 3 else 0) for lab in LABELS]
    else:
        label_counts = list(label_counts)
        if len(label_counts) != 3 or sum(label_counts) != n_calls:
            raise CorpusError("label_counts must have 3 entries summing to n_calls")
        if min(label_counts) < k:
            raise CorpusError(f"every class needs >= {k} calls for {k}-fold stratification")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.array(LABELS), label_counts)
    labels = labels[rng.permutation(len(labels))]
    width = max(3, len(str(n_calls - 1)))
    calls = []
    for i, lab in enumerate(labels):
        call = _synth_call(rng, f"syn{i:0{width}d}", int(lab), spec)
        age = None if rng.random() < 8 / 154 else int(np.clip(round(rng.normal(22.0, 5.0)), 14, 70))
        gender = None if rng.random() < 55 / 154 else ("M" if rng.random() < 57 / 99 else "F")
        calls.append(replace(call, age=age, gender=gender))
    return calls


def strip_annotations(calls: Iterable[Call]) -> list[Call]:
    return [c.with_segments(replace(s, annotation=None) for s in c.segments) for c in calls]
