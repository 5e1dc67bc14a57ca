"""TAF scoring logic and diagnostic-reasoning targets.

Each of the Affective, Behavioral and Cognitive domains is scored 1-3; the total
(3-9) maps to a crisis level through two configurable thresholds.
"""

from __future__ import annotations

import itertools
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Optional

from .corpus import LABELS, validate_label
from .llm_client import BackendError, TextGenBackend
from .resources import load_json, load_text

log = logging.getLogger(__name__)

DOMAINS = ("affective", "behavioral", "cognitive")
SCORE_MIN, SCORE_MAX = 1, 3


class ReasoningError(RuntimeError):
    pass


@dataclass(frozen=True)
class TafConfig:
    level_thresholds: tuple[int, int] = (6, 8)
    criteria: Optional[dict[str, Any]] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        t0, t1 = self.level_thresholds
        object.__setattr__(self, "level_thresholds", (int(t0), int(t1)))
        if not 3 <= t0 < t1 < 9:
            raise ValueError(f"thresholds must satisfy 3 <= t0 < t1 < 9, got {self.level_thresholds}")

    @property
    def taf(self) -> dict[str, Any]:
        return self.criteria if self.criteria is not None else load_json("taf_criteria.json")

    def criteria_text(self) -> str:
        lines = []
        for name in DOMAINS:
            dom = self.taf["domains"][name]
            lines.append(f"{dom['title']}: {dom['description']}")
            for score in ("1", "2", "3"):
                s = dom["scores"][score]
                lines.append(f"  {score} ({s['severity']}): {s['criterion']}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {"level_thresholds": list(self.level_thresholds)}


def level_from_total(total: int, cfg: TafConfig | None = None) -> int:
    cfg = cfg or TafConfig()
    if isinstance(total, bool) or not isinstance(total, int) or not 3 <= total <= 9:
        raise ValueError(f"total must be an integer in [3, 9], got {total!r}")
    t0, t1 = cfg.level_thresholds
    if total <= t0:
        return 0
    if total <= t1:
        return 1
    return 2


@dataclass(frozen=True)
class TafAssessment:
    affective: int
    behavioral: int
    cognitive: int
    level: int

    @property
    def total(self) -> int:
        return self.affective + self.behavioral + self.cognitive

    @classmethod
    def from_scores(cls, a: int, b: int, c: int, cfg: TafConfig | None = None) -> "TafAssessment":
        for s in (a, b, c):
            if not SCORE_MIN <= s <= SCORE_MAX:
                raise ValueError(f"domain score {s} outside [{SCORE_MIN}, {SCORE_MAX}]")
        return cls(a, b, c, level_from_total(a + b + c, cfg))

    def to_dict(self) -> dict[str, int]:
        return {
            "affective": self.affective,
            "behavioral": self.behavioral,
            "cognitive": self.cognitive,
            "total": self.total,
            "level": self.level,
        }


def triples_for_label(label: int, cfg: TafConfig | None = None) -> list[tuple[int, int, int]]:
    scores = range(SCORE_MIN, SCORE_MAX + 1)
    return [t for t in itertools.product(scores, repeat=3) if level_from_total(sum(t), cfg) == label]


def assessment_for_label(label: int, cfg: TafConfig | None = None, seed: int = 0) -> TafAssessment:
    """Domain scores drawn uniformly (seeded) from the triples whose total maps to ``label``."""
    validate_label(label)
    triples = triples_for_label(label, cfg)
    if not triples:
        raise ReasoningError(f"no score triple maps to level {label} under {cfg}")
    a, b, c = random.Random(seed).choice(triples)
    return TafAssessment.from_scores(a, b, c, cfg)


@dataclass(frozen=True)
class ReasoningTarget:
    text: str
    assessment: TafAssessment
    source: str = "template"
    fallback: bool = False
    attempts: int = 0

    def provenance(self) -> dict[str, Any]:
        return {"source": self.source, "fallback": self.fallback, "attempts": self.attempts}


# --- validation -------------------------------------------------------------

PATTERNS = {
    "affective": re.compile(r"Affective score of (\d+)", re.IGNORECASE),
    "behavioral": re.compile(r"Behaviou?ral score of (\d+)", re.IGNORECASE),
    "cognitive": re.compile(r"Cognitive score of (\d+)", re.IGNORECASE),
    "total": re.compile(r"total score of (\d+)", re.IGNORECASE),
    "level": re.compile(r"crisis level is (\d+)", re.IGNORECASE),
}


@dataclass(frozen=True)
class ReasoningCheck:
    violations: tuple[str, ...]
    extracted: dict[str, Optional[int]]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def extract_fields(text: str) -> dict[str, Optional[int]]:
    """Last occurrence of each score/total/level phrase, or None when absent."""
    out: dict[str, Optional[int]] = {}
    for key, pat in PATTERNS.items():
        found = pat.findall(text)
        out[key] = int(found[-1]) if found else None
    return out


def validate_reasoning(text: str, expected_label: int, cfg: TafConfig | None = None) -> ReasoningCheck:
    fields = extract_fields(text)
    violations = []
    for key, value in fields.items():
        if value is None:
            violations.append(f"missing field: {key}")
    scores = [fields[d] for d in DOMAINS]
    for dom, value in zip(DOMAINS, scores):
        if value is not None and not SCORE_MIN <= value <= SCORE_MAX:
            violations.append(f"{dom} score {value} out of [{SCORE_MIN}, {SCORE_MAX}]")
    total, level = fields["total"], fields["level"]
    if total is not None and None not in scores and total != sum(scores):
        violations.append(f"total ≠ sum of domain scores ({total} vs {sum(scores)})")
    if total is not None and level is not None:
        if 3 <= total <= 9:
            implied = level_from_total(total, cfg)
            if level != implied:
                violations.append(f"level ≠ level_from_total(total) ({level} vs {implied})")
        else:
            violations.append(f"total {total} out of [3, 9]")
    if level is not None and level != expected_label:
        violations.append(f"level mismatch: expected {expected_label}, found {level}")
    return ReasoningCheck(tuple(violations), fields)


# --- template generator -----------------------------------------------------

_EMOTION_RE = re.compile(r"Emotion: ([^\]]*)\]")
_BLOCK_RE = re.compile(r"\[([^\[\]]*?); Emotion:")


def _affect_evidence(enriched_text: str) -> str:
    emotions = Counter()
    for m in _EMOTION_RE.finditer(enriched_text):
        for i, e in enumerate(m.group(1).split(" > ")):
            emotions[e.strip()] += 2 if i == 0 else 1
    cues = Counter()
    for m in _BLOCK_RE.finditer(enriched_text):
        for cue in m.group(1).split(", ")[:-1]:
            cues[cue.strip()] += 1
    top = [e.lower() for e, _ in sorted(emotions.items(), key=lambda kv: (-kv[1], kv[0]))[:2]]
    if not top:
        return "has no voice notes in the transcript to draw on"
    cue_list = [c for c, _ in sorted(cues.items(), key=lambda kv: (-kv[1], kv[0]))[:2]]
    phrase = " and ".join(top)
    if cue_list:
        return f"shows {phrase}, with {' and '.join(cue_list)} noted in the audio"
    return f"shows {phrase}"


def _clause(sentence: str) -> str:
    return sentence[:1].lower() + sentence[1:]


def generate_reasoning_template(
    enriched_text: str, label: int, cfg: TafConfig | None = None, seed: int = 0
) -> ReasoningTarget:
    """Deterministic TAF rationale: one sentence per domain, the total, then the verdict."""
    cfg = cfg or TafConfig()
    assessment = assessment_for_label(label, cfg, seed)
    rng = random.Random(f"{seed}:{label}:text")
    taf = cfg.taf
    doms = taf["domains"]

    def entry(name: str, score: int) -> dict:
        return doms[name]["scores"][str(score)]

    a, b, c = assessment.affective, assessment.behavioral, assessment.cognitive
    ea, eb, ec = entry("affective", a), entry("behavioral", b), entry("cognitive", c)
    t0, t1 = cfg.level_thresholds
    sentences = [
        f"Affect: the caller {_affect_evidence(enriched_text)}, and {rng.choice(ea['evidence'])}. "
        f"Severity here is {ea['severity']}, for an Affective score of {a}.",
        f"Behaviour: {_clause(rng.choice(eb['evidence']))}. "
        f"Severity here is {eb['severity']}, for a Behavioral score of {b}.",
        f"Cognition: {_clause(rng.choice(ec['evidence']))}. "
        f"Severity here is {ec['severity']}, for a Cognitive score of {c}.",
        f"Adding {a} + {b} + {c} gives a total score of {assessment.total}.",
        f"With level 0 up to {t0} and level 1 up to {t1}, the crisis level is {label} "
        f"({taf['levels'][str(label)]}).",
    ]
    target = ReasoningTarget(" ".join(sentences), assessment)
    check = validate_reasoning(target.text, label, cfg)
    if not check.ok:  # pragma: no cover - guarded by tests over all labels and seeds
        raise ReasoningError(f"template produced an inconsistent rationale: {check.violations}")
    return target


# --- backend generator ------------------------------------------------------


def reasoning_prompt(enriched_text: str, label: int, cfg: TafConfig) -> str:
    t0, t1 = cfg.level_thresholds
    return (
        load_text("reasoning_prompt_v1.txt")
        .replace("{criteria}", cfg.criteria_text())
        .replace("{t0}", str(t0))
        .replace("{t1}", str(t1))
        .replace("{label}", str(label))
        .replace("{transcript}", enriched_text)
    )


def generate_reasoning_backend(
    enriched_text: str,
    label: int,
    cfg: TafConfig | None,
    backend: TextGenBackend,
    *,
    max_attempts: int = 2,
    seed: int = 0,
) -> ReasoningTarget:
    """Ask ``backend`` for a rationale; fall back to the template after ``max_attempts`` invalid replies.

    Raises ReasoningError only when every attempt failed at the transport level.
    """
    cfg = cfg or TafConfig()
    validate_label(label)
    prompt = reasoning_prompt(enriched_text, label, cfg)
    transport_failures = 0
    for attempt in range(1, max_attempts + 1):
        try:
            text = backend.generate(prompt).strip()
        except BackendError as exc:
            transport_failures += 1
            log.warning("reasoning backend attempt %d failed: %s", attempt, exc)
            continue
        check = validate_reasoning(text, label, cfg)
        if check.ok:
            f = check.extracted
            assessment = TafAssessment.from_scores(f["affective"], f["behavioral"], f["cognitive"], cfg)
            return ReasoningTarget(text, assessment, source="backend", attempts=attempt)
        log.info("reasoning attempt %d rejected: %s", attempt, "; ".join(check.violations))
    if transport_failures == max_attempts:
        raise ReasoningError(f"reasoning backend unreachable after {max_attempts} attempts")
    fallback = generate_reasoning_template(enriched_text, label, cfg, seed)
    return ReasoningTarget(
        fallback.text, fallback.assessment, source="template", fallback=True, attempts=max_attempts
    )


__all__ = [
    "DOMAINS",
    "LABELS",
    "ReasoningCheck",
    "ReasoningError",
    "ReasoningTarget",
    "TafAssessment",
    "TafConfig",
    "assessment_for_label",
    "extract_fields",
    "generate_reasoning_backend",
    "generate_reasoning_template",
    "level_from_total",
    "triples_for_label",
    "validate_reasoning",
]
