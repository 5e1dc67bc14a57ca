"""Chunk predictions and subject-level majority voting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .augmentation import Chunk
from .modeling import CategoryReadout, ModelBackend, argmax_high, classification_input


class PredictionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Prediction:
    chunk_id: str
    call_id: str
    probs: tuple[float, float, float]

    @property
    def predicted(self) -> int:
        return argmax_high(self.probs)

    def to_dict(self) -> dict[str, Any]:
        return {"chunk_id": self.chunk_id, "probs": list(self.probs), "predicted": self.predicted}


def predict_chunk(backend: ModelBackend, chunk: Chunk, include_annotations: bool = True) -> Prediction:
    try:
        logits = backend.category_logits(classification_input(chunk, include_annotations))
        readout = CategoryReadout.from_logits(logits)
    except Exception as exc:
        raise PredictionError(f"chunk {chunk.chunk_id}: {exc}") from exc
    return Prediction(chunk.chunk_id, chunk.call_id, readout.probs)


def majority_vote(votes: Sequence[int]) -> int:
    """Most frequent label; ties go to the higher crisis level."""
    if not votes:
        raise PredictionError("no votes to aggregate")
    counts = Counter(votes)
    return max(counts, key=lambda lab: (counts[lab], lab))


def aggregate_call(predictions: Sequence[Prediction], method: str = "vote") -> int:
    """Subject-level label from one call's chunk predictions.

    ``method="vote"`` counts argmax labels; ``method="mean"`` takes the argmax of
    the averaged probabilities instead.
    """
    if not predictions:
        raise PredictionError("cannot aggregate an empty prediction list")
    call_ids = {p.call_id for p in predictions}
    if len(call_ids) != 1:
        raise PredictionError(f"predictions span several calls: {sorted(call_ids)}")
    if method == "vote":
        return majority_vote([p.predicted for p in predictions])
    if method == "mean":
        return argmax_high(np.mean([p.probs for p in predictions], axis=0).tolist())
    raise ValueError(f"unknown aggregation method {method!r}")


def predict_calls(
    backend: ModelBackend, chunks: Sequence[Chunk], include_annotations: bool = True, method: str = "vote"
) -> tuple[list[Prediction], dict[str, dict[str, Any]]]:
    """Predict every chunk and aggregate per call (call order follows first appearance)."""
    preds = [predict_chunk(backend, c, include_annotations) for c in chunks]
    by_call: dict[str, list[Prediction]] = {}
    for p in preds:
        by_call.setdefault(p.call_id, []).append(p)
    calls = {
        cid: {"call_id": cid, "votes": [p.predicted for p in ps], "final": aggregate_call(ps, method)}
        for cid, ps in by_call.items()
    }
    return preds, calls
