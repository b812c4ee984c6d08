import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    from gesturesynth import corpus

    return corpus.generate_synthetic(corpus.SyntheticSpec.head_gestures(n_turns=12, turn_seconds=(2.0, 4.0), seed=7))
