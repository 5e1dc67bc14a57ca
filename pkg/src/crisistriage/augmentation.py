"""Chunk augmentation: split calls into contiguous, fixed-duration, label-inheriting chunks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Call, Segment


@dataclass(frozen=True)
class ChunkConfig:
    target_duration_s: float = 400.0
    min_tail_fraction: float = 0.25

    def __post_init__(self) -> None:
        if not self.target_duration_s > 0:
            raise ValueError("target_duration_s must be > 0")
        if not 0.0 < self.min_tail_fraction <= 1.0:
            raise ValueError("min_tail_fraction must be in (0, 1]")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    call_id: str
    label: int
    segments: tuple[Segment, ...]
    first_index: int  # position of segments[0] in the parent call

    @property
    def span_s(self) -> tuple[float, float]:
        return (self.segments[0].start_s, self.segments[-1].end_s)

    @property
    def last_index(self) -> int:
        return self.first_index + len(self.segments) - 1

    def to_call(self) -> Call:
        return Call(call_id=self.chunk_id, label=self.label, segments=self.segments)


def _span(segments: Sequence[Segment]) -> float:
    return segments[-1].end_s - segments[0].start_s


def chunk_boundaries(segments: Sequence[Segment], cfg: ChunkConfig) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` index ranges of the chunks of ``segments``."""
    bounds: list[tuple[int, int]] = []
    start = 0
    for i in range(len(segments)):
        if segments[i].end_s - segments[start].start_s >= cfg.target_duration_s:
            bounds.append((start, i + 1))
            start = i + 1
    if start < len(segments):
        tail = segments[start:]
        if bounds and _span(tail) < cfg.min_tail_fraction * cfg.target_duration_s:
            bounds[-1] = (bounds[-1][0], len(segments))
        else:
            bounds.append((start, len(segments)))
    return bounds


def chunk_call(call: Call, cfg: ChunkConfig | None = None) -> list[Chunk]:
    cfg = cfg or ChunkConfig()
    return [
        Chunk(f"{call.call_id}#{k}", call.call_id, call.label, call.segments[a:b], a)
        for k, (a, b) in enumerate(chunk_boundaries(call.segments, cfg))
    ]


def whole_call_chunk(call: Call) -> Chunk:
    """The call as a single chunk (augmentation disabled)."""
    return Chunk(f"{call.call_id}#0", call.call_id, call.label, call.segments, 0)


def chunk_corpus(calls: Sequence[Call], cfg: ChunkConfig | None = None, *, augment: bool = True) -> list[Chunk]:
    chunks: list[Chunk] = []
    for call in calls:
        chunks.extend(chunk_call(call, cfg) if augment else [whole_call_chunk(call)])
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate chunk ids; call_ids must be unique")
    return chunks
