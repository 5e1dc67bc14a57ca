"""Paralinguistic annotation attached to a single transcript segment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

# "," is reserved alongside the bracket grammar's own delimiters: cue lists and
# the affect summary share one comma-separated run inside the block.
RESERVED_CHARS = "[];>,"


class AnnotationError(ValueError):
    pass


def sanitize(value: str) -> str:
    """Replace reserved characters with "/" and collapse whitespace."""
    out = "".join("/" if ch in RESERVED_CHARS else ch for ch in value)
    return " ".join(out.split())


@dataclass(frozen=True)
class ParalinguisticAnnotation:
    cues: tuple[str, ...]
    affect_summary: str
    emotion_ranking: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cues", tuple(self.cues))
        object.__setattr__(self, "emotion_ranking", tuple(self.emotion_ranking))
        if not self.cues:
            raise AnnotationError("annotation needs at least one cue")
        if not self.emotion_ranking:
            raise AnnotationError("annotation needs at least one ranked emotion")
        for field_name, entries in (
            ("cues", self.cues),
            ("affect_summary", (self.affect_summary,)),
            ("emotion_ranking", self.emotion_ranking),
        ):
            for entry in entries:
                if not isinstance(entry, str) or not entry.strip():
                    raise AnnotationError(f"{field_name}: empty entry")
                if entry != entry.strip() or "\n" in entry:
                    raise AnnotationError(f"{field_name}: entry {entry!r} has stray whitespace")
                bad = [ch for ch in entry if ch in RESERVED_CHARS]
                if bad:
                    raise AnnotationError(
                        f"{field_name}: entry {entry!r} contains reserved character {bad[0]!r}"
                    )

    @classmethod
    def sanitized(cls, cues, affect_summary, emotion_ranking) -> "ParalinguisticAnnotation":
        """Build from untrusted backend strings, dropping entries that sanitize to nothing."""
        clean_cues = [c for c in (sanitize(x) for x in cues) if c]
        clean_emotions = [e for e in (sanitize(x) for x in emotion_ranking) if e]
        return cls(tuple(clean_cues), sanitize(affect_summary), tuple(clean_emotions))

    def to_dict(self) -> dict[str, Any]:
        return {
            "cues": list(self.cues),
            "affect_summary": self.affect_summary,
            "emotion_ranking": list(self.emotion_ranking),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ParalinguisticAnnotation":
        if not isinstance(data, dict):
            raise AnnotationError("annotation must be an object")
        unknown = set(data) - {"cues", "affect_summary", "emotion_ranking"}
        if unknown:
            raise AnnotationError(f"unknown annotation keys: {sorted(unknown)}")
        try:
            cues = data["cues"]
            summary = data["affect_summary"]
            ranking = data["emotion_ranking"]
        except KeyError as exc:
            raise AnnotationError(f"annotation missing field {exc.args[0]!r}") from None
        if not isinstance(cues, list) or not isinstance(ranking, list):
            raise AnnotationError("cues and emotion_ranking must be lists")
        return cls(tuple(cues), summary, tuple(ranking))
