import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsvi.distributions import DirichletParams
from rsvi.mathcore import RandomStream
from rsvi.models import (
    ConjugateModel,
    SparseGammaDEF,
    conjugate_model_spec,
    def_model_spec,
    make_synthetic_def_data,
)

settings.register_profile(
    "suite",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def conj5():
    """The desk-scale conjugate instance: K=5, N=20, uniform prior."""
    return ConjugateModel(np.ones(5), np.array([8, 5, 4, 2, 1]))


@pytest.fixture(scope="session")
def conj5_spec(conj5):
    return conjugate_model_spec(conj5)


@pytest.fixture(scope="session")
def theta5():
    # mixed shapes around 1, one below (exercises the forced augmentation)
    return np.array([1.4, 0.8, 2.2, 1.0, 3.0])


@pytest.fixture(scope="session")
def q5(theta5):
    return DirichletParams(theta5)


@pytest.fixture(scope="session")
def def_small():
    counts, _ = make_synthetic_def_data((3, 2), 4, 3, RandomStream(0, 977))
    return SparseGammaDEF((3, 2), counts)


@pytest.fixture(scope="session")
def def_small_spec(def_small):
    return def_model_spec(def_small)


def fresh_stream(seed, stream_id=0):
    return RandomStream(seed, stream_id)
