import pytest

from crisistriage.annotation import ParalinguisticAnnotation
from crisistriage.corpus import Call, Segment, generate_synthetic_corpus


def make_call(call_id="c1", label=0, durations=(100.0,) * 3, gap=0.0, speaker_cycle=("caller", "operator")):
    segs, t = [], 0.0
    for i, d in enumerate(durations):
        segs.append(Segment(speaker_cycle[i % len(speaker_cycle)], t, t + d, f"utterance {i}"))
        t += d + gap
    return Call(call_id, label, tuple(segs))


@pytest.fixture
def annotation():
    return ParalinguisticAnnotation(("shaky breathing", "quiet voice", "long pauses"), "sounding worn out", ("Sadness", "Fear"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(3, 30)
