"""Zero-shot TAF baseline: ask a text backend for the three domain scores.

The label never enters this path; the level comes only from the parsed scores.
"""

from __future__ import annotations

import json
import logging
import re
from typing import Optional

from ..llm_client import BackendError, TextGenBackend
from ..reasoning import SCORE_MAX, SCORE_MIN, TafAssessment, TafConfig
from ..resources import load_text

log = logging.getLogger(__name__)


class ZeroShotError(RuntimeError):
    pass


_JSON_RE = re.compile(r"\{[^{}]*\}")
_LOOSE = {
    "A": re.compile(r"\b(?:A|Affective)\b\W{0,3}\s*(?:score)?\s*[:=]?\s*(\d)\b", re.IGNORECASE),
    "B": re.compile(r"\b(?:B|Behaviou?ral)\b\W{0,3}\s*(?:score)?\s*[:=]?\s*(\d)\b", re.IGNORECASE),
    "C": re.compile(r"\b(?:C|Cognitive)\b\W{0,3}\s*(?:score)?\s*[:=]?\s*(\d)\b", re.IGNORECASE),
}


def zeroshot_prompt(enriched_text: str, cfg: TafConfig) -> str:
    return (
        load_text("zeroshot_prompt_v1.txt")
        .replace("{criteria}", cfg.criteria_text())
        .replace("{transcript}", enriched_text)
    )


def _in_range(scores: dict) -> Optional[tuple[int, int, int]]:
    try:
        vals = tuple(int(scores[k]) for k in ("A", "B", "C"))
    except (KeyError, TypeError, ValueError):
        return None
    if all(SCORE_MIN <= v <= SCORE_MAX for v in vals):
        return vals  # type: ignore[return-value]
    return None


def parse_scores(reply: str) -> Optional[tuple[int, int, int]]:
    """Domain scores from the last JSON object in ``reply``, else from ``A: 2``-style text."""
    for blob in reversed(_JSON_RE.findall(reply)):
        try:
            data = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict):
            found = _in_range({k.upper()[:1]: v for k, v in data.items() if isinstance(k, str)})
            if found:
                return found
    loose = {}
    for key, pat in _LOOSE.items():
        hits = pat.findall(reply)
        if hits:
            loose[key] = hits[-1]
    return _in_range(loose)


def zero_shot_classify(
    enriched_text: str, cfg: TafConfig | None, backend: TextGenBackend, *, max_attempts: int = 2
) -> tuple[TafAssessment, int]:
    cfg = cfg or TafConfig()
    prompt = zeroshot_prompt(enriched_text, cfg)
    last = "no attempts made"
    for attempt in range(1, max_attempts + 1):
        try:
            reply = backend.generate(prompt)
        except BackendError as exc:
            last = f"backend error: {exc}"
            log.warning("zero-shot attempt %d failed: %s", attempt, exc)
            continue
        scores = parse_scores(reply)
        if scores is not None:
            assessment = TafAssessment.from_scores(*scores, cfg)
            return assessment, assessment.level
        last = f"no parseable A/B/C scores in reply {reply[:80]!r}"
        log.info("zero-shot attempt %d unparseable", attempt)
    raise ZeroShotError(f"zero-shot classification failed after {max_attempts} attempts ({last})")
