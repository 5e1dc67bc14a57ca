"""Stratified call-level k-fold cross-validation with metrics; ablation sweeps on top."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__
from .augmentation import Chunk, ChunkConfig, chunk_corpus
from .corpus import LABELS, Call
from .enrichment import render_segments
from .inference import predict_calls
from .llm_client import TextGenBackend
from .modeling import ReferenceBackend, TrainConfig, make_example, train
from .reasoning import TafConfig, generate_reasoning_backend, generate_reasoning_template

log = logging.getLogger(__name__)

REPORT_SCHEMA = "crisistriage.eval-report"
REPORT_SCHEMA_VERSION = 1


class EvaluationError(RuntimeError):
    def __init__(self, message: str, fold_index: Optional[int] = None):
        prefix = "" if fold_index is None else f"fold {fold_index}: "
        super().__init__(prefix + message)
        self.fold_index = fold_index


class LeakageError(EvaluationError):
    pass


# --- folds ------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_call_ids: tuple[str, ...]
    test_call_ids: tuple[str, ...]


def make_folds(calls: Sequence[Call], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Label-stratified call-level folds.

    Each class is shuffled (seeded) and dealt round-robin, the dealing offset
    carrying over between classes so fold sizes stay within one of each other.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    by_label = {lab: [c.call_id for c in calls if c.label == lab] for lab in LABELS}
    for lab, ids in by_label.items():
        if len(ids) < k:
            raise EvaluationError(f"class {lab} has {len(ids)} calls; {k}-fold stratification needs >= {k}")
    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    offset = 0
    for lab in LABELS:
        ids = by_label[lab]
        for j, idx in enumerate(rng.permutation(len(ids))):
            fold_of[ids[int(idx)]] = (offset + j) % k
        offset = (offset + len(ids)) % k
    order = [c.call_id for c in calls]
    return [
        FoldSplit(
            f,
            tuple(cid for cid in order if fold_of[cid] != f),
            tuple(cid for cid in order if fold_of[cid] == f),
        )
        for f in range(k)
    ]


# --- metrics ----------------------------------------------------------------


def _check_pair(true_labels: Sequence[int], predicted: Sequence[int]) -> None:
    if len(true_labels) != len(predicted):
        raise ValueError(f"length mismatch: {len(true_labels)} true vs {len(predicted)} predicted")
    if not true_labels:
        raise ValueError("empty label lists")


def confusion_matrix(true_labels: Sequence[int], predicted: Sequence[int]) -> list[list[int]]:
    """3x3 counts, rows = true label, columns = predicted label."""
    _check_pair(true_labels, predicted)
    cm = [[0, 0, 0] for _ in LABELS]
    for t, p in zip(true_labels, predicted):
        cm[t][p] += 1
    return cm


def per_class_f1(true_labels: Sequence[int], predicted: Sequence[int]) -> list[float]:
    cm = confusion_matrix(true_labels, predicted)
    out = []
    for c in LABELS:
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in LABELS) - tp
        fn = sum(cm[c]) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return out


def macro_f1(true_labels: Sequence[int], predicted: Sequence[int]) -> float:
    """Unweighted mean F1 over the fixed class set {0, 1, 2}; undefined ratios count as 0."""
    return float(sum(per_class_f1(true_labels, predicted)) / len(LABELS))


def accuracy(true_labels: Sequence[int], predicted: Sequence[int]) -> float:
    _check_pair(true_labels, predicted)
    return float(np.mean([t == p for t, p in zip(true_labels, predicted)]))


# --- report -----------------------------------------------------------------


@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    accuracy: float
    macro_f1: float
    confusion: list[list[int]]
    n_train_chunks: int = 0
    n_test_calls: int = 0
    n_test_chunks: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold_index": self.fold_index,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "n_train_chunks": self.n_train_chunks,
            "n_test_calls": self.n_test_calls,
            "n_test_chunks": self.n_test_chunks,
        }


@dataclass(frozen=True)
class EvalReport:
    name: str
    per_fold: tuple[FoldResult, ...]
    fingerprint: str
    seed: int
    config: dict[str, Any] = field(default_factory=dict)
    calls: tuple[dict[str, Any], ...] = ()

    def _values(self, key: str) -> np.ndarray:
        return np.array([getattr(f, key) for f in self.per_fold], dtype=float)

    @property
    def mean_accuracy(self) -> float:
        return float(self._values("accuracy").mean())

    @property
    def std_accuracy(self) -> float:
        return float(self._values("accuracy").std())

    @property
    def mean_macro_f1(self) -> float:
        return float(self._values("macro_f1").mean())

    @property
    def std_macro_f1(self) -> float:
        return float(self._values("macro_f1").std())

    @property
    def confusion_total(self) -> list[list[int]]:
        total = np.zeros((3, 3), dtype=int)
        for f in self.per_fold:
            total += np.asarray(f.confusion, dtype=int)
        return total.tolist()

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "schema_version": REPORT_SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "std_convention": "population",
            "k": len(self.per_fold),
            "per_fold": [f.to_dict() for f in self.per_fold],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "mean_macro_f1": self.mean_macro_f1,
            "std_macro_f1": self.std_macro_f1,
            "confusion_total": self.confusion_total,
            "calls": list(self.calls),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise ValueError("not an evaluation report")
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {data.get('schema_version')!r}")
        folds = tuple(FoldResult(**f) for f in data["per_fold"])
        return cls(data["name"], folds, data["fingerprint"], data["seed"], data.get("config", {}), tuple(data.get("calls", ())))

    def summary_row(self) -> dict[str, str]:
        return {
            "Configuration": self.name,
            "Accuracy": f"{self.mean_accuracy:.3f} ± {self.std_accuracy:.3f}",
            "MacroF1": f"{self.mean_macro_f1:.3f} ± {self.std_macro_f1:.3f}",
        }


def fingerprint(config: dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def environment_info() -> dict[str, str]:
    return {"crisistriage": __version__, "python": platform.python_version(), "numpy": np.__version__}


def score_folds(
    name: str,
    folds: Sequence[FoldSplit],
    truth: dict[str, int],
    predicted: dict[str, int],
    config: dict[str, Any],
    seed: int,
    extra_calls: Optional[dict[str, dict[str, Any]]] = None,
    fold_meta: Optional[dict[int, dict[str, int]]] = None,
) -> EvalReport:
    """Assemble an EvalReport from call-level predictions keyed by call id."""
    results = []
    call_rows = []
    for fold in folds:
        ids = fold.test_call_ids
        t = [truth[c] for c in ids]
        p = [predicted[c] for c in ids]
        meta = (fold_meta or {}).get(fold.fold_index, {})
        results.append(
            FoldResult(
                fold.fold_index,
                accuracy(t, p),
                macro_f1(t, p),
                confusion_matrix(t, p),
                n_train_chunks=meta.get("n_train_chunks", 0),
                n_test_calls=len(ids),
                n_test_chunks=meta.get("n_test_chunks", len(ids)),
            )
        )
        for cid in ids:
            row = {"call_id": cid, "fold": fold.fold_index, "true": truth[cid], "final": predicted[cid]}
            if extra_calls and cid in extra_calls:
                row.update({k: v for k, v in extra_calls[cid].items() if k not in row})
            call_rows.append(row)
    call_rows.sort(key=lambda r: r["call_id"])
    return EvalReport(name, tuple(results), fingerprint(config), seed, config, tuple(call_rows))


# --- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "Ours"
    k: int = 5
    seed: int = 0
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    taf: TafConfig = field(default_factory=TafConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: dict[str, Any] = field(default_factory=dict)
    use_augmentation: bool = True
    reasoning_mode: str = "template"
    aggregation: str = "vote"

    @property
    def include_annotations(self) -> bool:
        return self.train.include_annotations

    @property
    def use_auxiliary_loss(self) -> bool:
        return self.train.use_auxiliary_loss

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "k": self.k,
            "seed": self.seed,
            "chunk": {
                "target_duration_s": self.chunk.target_duration_s,
                "min_tail_fraction": self.chunk.min_tail_fraction,
            },
            "taf": self.taf.to_dict(),
            "train": self.train.to_dict(),
            "backend": dict(self.backend),
            "use_augmentation": self.use_augmentation,
            "reasoning_mode": self.reasoning_mode,
            "aggregation": self.aggregation,
        }

    def with_flags(self, **flags: Any) -> "PipelineConfig":
        """Copy with ablation flags applied (``include_annotations`` and
        ``use_auxiliary_loss`` live on the train config)."""
        train_flags = {k: flags.pop(k) for k in ("include_annotations", "use_auxiliary_loss") if k in flags}
        cfg = replace(self, **flags)
        if train_flags:
            cfg = replace(cfg, train=replace(cfg.train, **train_flags))
        return cfg


def chunk_seed(chunk_id: str, seed: int) -> int:
    return zlib.crc32(f"{seed}:{chunk_id}".encode("utf-8"))


def reasoning_for_chunk(
    chunk: Chunk, cfg: PipelineConfig, text_backend: Optional[TextGenBackend] = None
):
    context = render_segments(chunk.segments, cfg.include_annotations)
    seed = chunk_seed(chunk.chunk_id, cfg.seed)
    if cfg.reasoning_mode == "template":
        return generate_reasoning_template(context, chunk.label, cfg.taf, seed)
    if cfg.reasoning_mode == "backend":
        if text_backend is None:
            raise EvaluationError("reasoning_mode 'backend' needs a text backend")
        return generate_reasoning_backend(context, chunk.label, cfg.taf, text_backend, seed=seed)
    raise EvaluationError(f"unknown reasoning_mode {cfg.reasoning_mode!r}")


def default_backend_factory(cfg: PipelineConfig) -> ReferenceBackend:
    return ReferenceBackend(**cfg.backend)


def run_cv(
    calls: Sequence[Call],
    cfg: PipelineConfig | None = None,
    *,
    backend_factory: Callable[[PipelineConfig], Any] = default_backend_factory,
    text_backend: Optional[TextGenBackend] = None,
) -> EvalReport:
    """Chunk, synthesise targets, train a fresh backend and score each fold."""
    cfg = cfg or PipelineConfig()
    folds = make_folds(calls, cfg.k, cfg.seed)
    by_id = {c.call_id: c for c in calls}
    truth = {c.call_id: c.label for c in calls}
    predicted: dict[str, int] = {}
    extra: dict[str, dict[str, Any]] = {}
    meta: dict[int, dict[str, int]] = {}
    for fold in folds:
        try:
            train_calls = [by_id[c] for c in fold.train_call_ids]
            test_calls = [by_id[c] for c in fold.test_call_ids]
            train_chunks = chunk_corpus(train_calls, cfg.chunk, augment=cfg.use_augmentation)
            test_ids = set(fold.test_call_ids)
            leaked = sorted({ch.call_id for ch in train_chunks} & test_ids)
            if leaked:
                raise LeakageError(f"test calls present in training chunks: {leaked}", fold.fold_index)
            examples = [
                make_example(ch, reasoning_for_chunk(ch, cfg, text_backend), cfg.include_annotations)
                for ch in train_chunks
            ]
            backend = backend_factory(cfg)
            train_cfg = replace(cfg.train, seed=cfg.train.seed + 1000 * cfg.seed + fold.fold_index)
            train(examples, backend, train_cfg)
            test_chunks = chunk_corpus(test_calls, cfg.chunk, augment=cfg.use_augmentation)
            _, per_call = predict_calls(backend, test_chunks, cfg.include_annotations, cfg.aggregation)
        except EvaluationError:
            raise
        except Exception as exc:
            raise EvaluationError(f"{type(exc).__name__}: {exc}", fold.fold_index) from exc
        for cid, row in per_call.items():
            predicted[cid] = row["final"]
            extra[cid] = {"votes": row["votes"]}
        meta[fold.fold_index] = {"n_train_chunks": len(train_chunks), "n_test_chunks": len(test_chunks)}
        log.info("fold %d: %d train chunks, %d test chunks", fold.fold_index, len(train_chunks), len(test_chunks))
    return score_folds(cfg.name, folds, truth, predicted, cfg.to_dict(), cfg.seed, extra, meta)


ABLATIONS = {
    "Final Result": {},
    "w/o Augmentation": {"use_augmentation": False},
    "w/o Paralinguistic Injection": {"include_annotations": False},
    "w/o Auxiliary Loss": {"use_auxiliary_loss": False},
}


def run_ablations(
    calls: Sequence[Call], base: PipelineConfig | None = None, variants: Sequence[str] | None = None, **kwargs
) -> list[EvalReport]:
    """Run the full pipeline and each named ablation on the same folds."""
    base = base or PipelineConfig()
    names = list(variants or ABLATIONS)
    reports = []
    for name in names:
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        cfg = base.with_flags(name=name, **ABLATIONS[name])
        reports.append(run_cv(calls, cfg, **kwargs))
    return reports
