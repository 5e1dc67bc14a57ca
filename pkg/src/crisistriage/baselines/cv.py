"""Cross-validated reports for the baselines, on the same call-level folds as the main pipeline."""

from __future__ import annotations

from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..corpus import Call
from ..enrichment import render_enriched
from ..evaluation import EvalReport, EvaluationError, make_folds, score_folds
from ..llm_client import TextGenBackend
from ..reasoning import TafConfig
from .svm import SvmConfig, svm_fit
from .zeroshot import zero_shot_classify


def run_acoustic_cv(
    calls: Sequence[Call],
    features: Mapping[str, np.ndarray],
    cfg: SvmConfig | None = None,
    *,
    k: int = 5,
    seed: int = 0,
    name: str = "Acoustic SVM",
) -> EvalReport:
    cfg = cfg or SvmConfig()
    missing = sorted(c.call_id for c in calls if c.call_id not in features)
    if missing:
        raise EvaluationError(f"no feature vector for calls {missing[:5]}{'...' if len(missing) > 5 else ''}")
    folds = make_folds(calls, k, seed)
    truth = {c.call_id: c.label for c in calls}
    predicted: dict[str, int] = {}
    for fold in folds:
        try:
            x = np.stack([features[c] for c in fold.train_call_ids])
            model = svm_fit(x, [truth[c] for c in fold.train_call_ids], cfg)
            pred = model.predict(np.stack([features[c] for c in fold.test_call_ids]))
        except Exception as exc:
            raise EvaluationError(f"{type(exc).__name__}: {exc}", fold.fold_index) from exc
        predicted.update(zip(fold.test_call_ids, (int(p) for p in pred)))
    config = {"baseline": "acoustic", "k": k, "seed": seed, "svm": _svm_dict(cfg)}
    return score_folds(name, folds, truth, predicted, config, seed)


def run_zeroshot_cv(
    calls: Sequence[Call],
    backend: TextGenBackend,
    taf: TafConfig | None = None,
    *,
    k: int = 5,
    seed: int = 0,
    include_annotations: bool = True,
    max_attempts: int = 2,
    name: str = "Zero-shot TAF",
) -> EvalReport:
    """Zero-shot needs no training; folds only group the test calls for mean ± std reporting."""
    taf = taf or TafConfig()
    folds = make_folds(calls, k, seed)
    truth = {c.call_id: c.label for c in calls}
    predicted: dict[str, int] = {}
    extra: dict[str, dict[str, Any]] = {}
    by_id = {c.call_id: c for c in calls}
    for fold in folds:
        for cid in fold.test_call_ids:
            try:
                text = render_enriched(by_id[cid], include_annotations)
                assessment, level = zero_shot_classify(text, taf, backend, max_attempts=max_attempts)
            except Exception as exc:
                raise EvaluationError(f"call {cid}: {exc}", fold.fold_index) from exc
            predicted[cid] = level
            extra[cid] = {"scores": assessment.to_dict()}
    config = {
        "baseline": "zeroshot",
        "k": k,
        "seed": seed,
        "taf": taf.to_dict(),
        "include_annotations": include_annotations,
        "max_attempts": max_attempts,
    }
    return score_folds(name, folds, truth, predicted, config, seed, extra)


def _svm_dict(cfg: SvmConfig) -> dict[str, Any]:
    weight: Optional[Any] = cfg.class_weight
    if isinstance(weight, dict):
        weight = {str(k): v for k, v in weight.items()}
    return {
        "c": cfg.c,
        "gamma": cfg.gamma,
        "class_weight": weight,
        "tolerance": cfg.tolerance,
        "max_passes": cfg.max_passes,
        "standardize": cfg.standardize,
    }
