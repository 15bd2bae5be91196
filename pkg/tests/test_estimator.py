import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fkdrift import DriftSampler, GmmSpec, TargetSpec


def target(gamma=2.0):
    return TargetSpec(GmmSpec(np.array([[1.0, -1.0]]), 4.0), gamma)


def test_fit_attributes():
    est = DriftSampler(n_particles=300, steps=30).fit(target())
    assert est.samples_.shape == (300, 2)
    assert est.weights_.sum() == pytest.approx(1.0)
    assert est.n_features_in_ == 2
    assert est.theta_.shape == (30, 1)
    assert len(est.trace_) == 30


def test_params_roundtrip_and_clone():
    est = DriftSampler(method="ECG_SMC", rounds=2, random_state=5)
    assert est.get_params()["method"] == "ECG_SMC"
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert not hasattr(c, "samples_")


def test_reproducible():
    a = DriftSampler(n_particles=100, steps=20, random_state=3).fit(target())
    b = DriftSampler(n_particles=100, steps=20, random_state=3).fit(target())
    assert_array_equal(a.samples_, b.samples_)


def test_sample_and_score():
    est = DriftSampler(n_particles=400, steps=30).fit(target())
    x = est.sample(50, random_state=0)
    assert x.shape == (50, 2)
    ref = np.random.default_rng(0).normal([1.0, -1.0], np.sqrt(2.0), size=(400, 2))
    assert est.score(ref) <= 0.0
    with pytest.raises(ValueError):
        est.score(np.zeros((3, 5)))


def test_unfitted():
    with pytest.raises(NotFittedError):
        DriftSampler().sample(3)


def test_bad_params():
    with pytest.raises(ValueError):
        DriftSampler(n_particles=1).fit(target())
    with pytest.raises(ValueError):
        DriftSampler(method="PG", rounds=2, n_particles=10, steps=5).fit(target())
    with pytest.raises(TypeError):
        DriftSampler().fit(np.zeros((3, 2)))


def test_refinement_rounds():
    est = DriftSampler(n_particles=100, steps=20, rounds=3).fit(target(3.0))
    assert len(est.traces_) == 3
    assert_allclose(np.array(est.trace_.theta), est.theta_)
