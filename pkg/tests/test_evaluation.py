import json
import random
from dataclasses import replace

import numpy as np
import pytest

from crisistriage import evaluation
from crisistriage.corpus import SignalSpec, generate_synthetic_corpus
from crisistriage.evaluation import (
    EvalReport,
    EvaluationError,
    LeakageError,
    PipelineConfig,
    accuracy,
    confusion_matrix,
    macro_f1,
    make_folds,
    run_cv,
)
from crisistriage.io import canonical_json
from crisistriage.modeling import ReferenceBackend, TrainConfig
from conftest import make_call


def oracle_macro_f1(t, p):
    scores = []
    for c in (0, 1, 2):
        tp = sum(1 for a, b in zip(t, p) if a == c and b == c)
        pp = sum(1 for b in p if b == c)
        ap = sum(1 for a in t if a == c)
        prec = tp / pp if pp else 0.0
        rec = tp / ap if ap else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / 3


def test_macro_f1_examples():
    assert macro_f1([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0
    assert macro_f1([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]) == pytest.approx((0.5 + 0.8 + 2 / 3) / 3, abs=1e-15)
    assert round(macro_f1([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]), 4) == 0.6556
    for n in (1, 4, 10):
        assert round(macro_f1([0] * n + [1] * n + [2] * n, [0] * 3 * n), 4) == 0.1667


def test_macro_f1_oracle():
    rng = random.Random(77)
    for i in range(500):
        n = rng.randint(1, 30)
        if i % 5 == 0:  # degenerate single-class vectors
            t = [rng.randint(0, 2)] * n
            p = [rng.randint(0, 2)] * n if i % 10 else t
        else:
            t = [rng.randint(0, 2) for _ in range(n)]
            p = [rng.randint(0, 2) for _ in range(n)]
        assert macro_f1(t, p) == oracle_macro_f1(t, p)


def test_metric_errors():
    with pytest.raises(ValueError):
        macro_f1([0, 1], [0])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_accuracy_and_confusion():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([0, 1, 2, 2], [0, 2, 2, 1]) == 0.5
    assert confusion_matrix([0, 1, 2, 2], [0, 2, 2, 1]) == [[1, 0, 0], [0, 0, 1], [0, 1, 1]]


def _calls(counts):
    out = []
    for lab, n in enumerate(counts):
        out += [make_call(f"L{lab}_{i}", lab, durations=(10.0,)) for i in range(n)]
    return out


def test_folds_one_per_class():
    folds = make_folds(_calls((5, 5, 5)), 5, seed=0)
    labels = {c.call_id: c.label for c in _calls((5, 5, 5))}
    for f in folds:
        assert sorted(labels[c] for c in f.test_call_ids) == [0, 1, 2]


def test_folds_proportional_sizes():
    calls = _calls((55, 42, 57))
    folds = make_folds(calls, 5, seed=3)
    labels = {c.call_id: c.label for c in calls}
    assert all(30 <= len(f.test_call_ids) <= 32 for f in folds)
    for f in folds:
        for lab, n in enumerate((55, 42, 57)):
            got = sum(1 for c in f.test_call_ids if labels[c] == lab)
            assert abs(got - n / 5) <= 1
        assert not set(f.train_call_ids) & set(f.test_call_ids)
        assert len(f.train_call_ids) + len(f.test_call_ids) == 154
    tested = [c for f in folds for c in f.test_call_ids]
    assert sorted(tested) == sorted(labels)


def test_folds_deterministic():
    calls = _calls((10, 10, 10))
    assert make_folds(calls, 5, 9) == make_folds(calls, 5, 9)
    assert make_folds(calls, 5, 9) != make_folds(calls, 5, 10)


def test_folds_small_class_error():
    with pytest.raises(EvaluationError, match="class 1"):
        make_folds(_calls((5, 4, 5)), 5)


FAST = PipelineConfig(train=TrainConfig(epochs=3), backend={"dim": 256})


def test_report_recompute_and_rerun():
    calls = generate_synthetic_corpus(2, 30)
    a = run_cv(calls, FAST)
    b = run_cv(calls, FAST)
    assert canonical_json(a.to_dict()) == canonical_json(b.to_dict())
    d = a.to_dict()
    f1s = np.array([f["macro_f1"] for f in d["per_fold"]])
    accs = np.array([f["accuracy"] for f in d["per_fold"]])
    assert abs(d["mean_macro_f1"] - f1s.sum() / len(f1s)) <= 1e-12
    assert abs(d["std_macro_f1"] - np.sqrt(((f1s - f1s.mean()) ** 2).sum() / len(f1s))) <= 1e-12
    assert abs(d["std_accuracy"] - np.sqrt(((accs - accs.mean()) ** 2).sum() / len(accs))) <= 1e-12
    back = EvalReport.from_dict(json.loads(canonical_json(d)))
    assert canonical_json(back.to_dict()) == canonical_json(d)
    assert set(a.summary_row()) == {"Configuration", "Accuracy", "MacroF1"}
    assert " ± " in a.summary_row()["MacroF1"]


def test_no_augmentation_trains_whole_calls():
    calls = generate_synthetic_corpus(2, 30, SignalSpec(duration_min=(20.0, 2.0), min_duration_min=15.0))
    rep = run_cv(calls, FAST.with_flags(use_augmentation=False))
    for f in rep.per_fold:
        assert f.n_train_chunks == 30 - f.n_test_calls and f.n_test_chunks == f.n_test_calls
    rep2 = run_cv(calls, FAST)
    assert all(f.n_train_chunks > 30 - f.n_test_calls for f in rep2.per_fold)


class SpyBackend(ReferenceBackend):
    seen: list = []

    def apply_update(self, batch, learning_rate, use_auxiliary_loss=True):
        SpyBackend.seen.extend(ex.example_id.split("#")[0] for ex in batch)
        return super().apply_update(batch, learning_rate, use_auxiliary_loss)


def test_no_leakage_20_corpora():
    from crisistriage.evaluation import make_folds as folds_of

    for s in range(20):
        calls = generate_synthetic_corpus(100 + s, 15 + 3 * (s % 4),
                                          SignalSpec(duration_min=(12.0, 4.0), min_duration_min=3.0))
        cfg = replace(FAST, seed=s, train=TrainConfig(epochs=1), backend={"dim": 64})
        per_fold = []

        def factory(c):
            SpyBackend.seen = []
            per_fold.append(SpyBackend.seen)
            return SpyBackend(dim=64)

        run_cv(calls, cfg, backend_factory=factory)
        for fold, seen in zip(folds_of(calls, cfg.k, cfg.seed), per_fold):
            assert seen and not set(seen) & set(fold.test_call_ids)


def test_leakage_guard_fires(monkeypatch):
    calls = generate_synthetic_corpus(1, 15)
    real = evaluation.chunk_corpus

    def leaky(cs, cfg=None, augment=True):
        return real(list(cs) + [c for c in calls if c not in cs][:1], cfg, augment=augment)

    monkeypatch.setattr(evaluation, "chunk_corpus", leaky)
    with pytest.raises(LeakageError) as exc:
        run_cv(calls, FAST)
    assert exc.value.fold_index == 0


def test_stage_error_names_fold():
    calls = generate_synthetic_corpus(1, 15)

    def broken(cfg):
        raise RuntimeError("backend exploded")

    with pytest.raises(EvaluationError, match="fold 0: RuntimeError"):
        run_cv(calls, FAST, backend_factory=broken)


def test_cue_only_needs_annotations():
    calls = generate_synthetic_corpus(7, 60, SignalSpec(mode="cue"))
    full = run_cv(calls, PipelineConfig(seed=7))
    bare = run_cv(calls, PipelineConfig(seed=7).with_flags(include_annotations=False))
    assert full.mean_macro_f1 > 0.85
    assert bare.mean_macro_f1 <= 0.5
