import itertools
import random
from collections import Counter

import pytest

from crisistriage.augmentation import chunk_call
from crisistriage.inference import Prediction, PredictionError, aggregate_call, majority_vote, predict_calls
from crisistriage.modeling import ReferenceBackend
from conftest import make_call


def test_vote_examples():
    assert majority_vote([2, 0, 2]) == 2
    assert majority_vote([0, 1]) == 1
    assert majority_vote([0]) == 0
    assert majority_vote([0, 0, 1, 1, 2, 2]) == 2


def _oracle(votes):
    top = max(votes.count(v) for v in (0, 1, 2))
    return max(v for v in (0, 1, 2) if votes.count(v) == top)


def test_vote_against_brute_force():
    rng = random.Random(9)
    for _ in range(1000):
        votes = [rng.randint(0, 2) for _ in range(rng.randint(1, 12))]
        assert majority_vote(votes) == _oracle(votes)


def test_vote_monotone():
    for n in range(1, 7):
        for votes in itertools.product(range(3), repeat=n):
            v = list(votes)
            w = majority_vote(v)
            assert majority_vote(v + [w]) == w


def test_empty_votes_error():
    with pytest.raises(PredictionError):
        majority_vote([])
    with pytest.raises(PredictionError):
        aggregate_call([])


def test_mean_aggregation():
    preds = [Prediction("a#0", "a", (0.5, 0.4, 0.1)), Prediction("a#1", "a", (0.5, 0.4, 0.1)),
             Prediction("a#2", "a", (0.0, 0.1, 0.9))]
    assert aggregate_call(preds, "vote") == 0
    assert aggregate_call(preds, "mean") == 2  # means (0.333, 0.3, 0.367)


def test_mixed_call_ids_rejected():
    with pytest.raises(PredictionError):
        aggregate_call([Prediction("a#0", "a", (1, 0, 0)), Prediction("b#0", "b", (1, 0, 0))])


def test_predict_calls_shapes():
    call = make_call("z", 1, durations=(200.0,) * 6)
    chunks = chunk_call(call)
    preds, calls = predict_calls(ReferenceBackend(dim=64), chunks)
    assert len(preds) == len(chunks) == 3
    assert calls["z"]["votes"] == [p.predicted for p in preds]
    assert calls["z"]["final"] == majority_vote(calls["z"]["votes"])
    for p in preds:
        assert abs(sum(p.probs) - 1.0) < 1e-9
