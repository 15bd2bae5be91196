import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from fkdrift.metrics import rdf_w1
from fkdrift.reference import (
    EnvelopeViolation,
    LangevinConfig,
    baoab_dw4,
    baoab_sample,
    cached_reference,
    posterior_gmm,
    read_samples_csv,
    sample_annealed_gmm,
    sample_gmm,
    snis_posterior_samples,
    spec_hash,
    write_samples_csv,
)
from fkdrift.targets import DoubleWellSpec, GmmSpec, QuadraticReward


def test_sample_gmm_moments():
    g = GmmSpec(np.array([[-4.0], [6.0]]), 1.0, [0.25, 0.75])
    x = sample_gmm(g, 40000, seed=0)[:, 0]
    assert x.mean() == pytest.approx(0.25 * -4 + 0.75 * 6, abs=0.05)
    assert np.mean(x < 1) == pytest.approx(0.25, abs=0.01)


def test_gamma_one_accepts_everything():
    g = GmmSpec.random(n_components=5, dim=3, seed=1)
    # a single batch suffices only if the acceptance rate is exactly one
    x = sample_annealed_gmm(g, 1.0, 500, seed=0, batch=500, max_proposals=500)
    assert x.shape == (500, 3)


def test_single_component_moments():
    g = GmmSpec(np.array([[2.0, -1.0]]), 6.0)
    x = sample_annealed_gmm(g, 3.0, 40000, seed=2)
    assert_allclose(x.mean(axis=0), [2.0, -1.0], atol=4 * np.sqrt(2.0 / 40000))
    assert_allclose(x.var(axis=0), 2.0, rtol=0.03)


def test_two_component_mass_by_quadrature():
    g = GmmSpec(np.array([[-3.0], [3.0]]), 4.0, [0.3, 0.7])
    gamma = 2.5

    def q(x):
        return (0.3 * stats.norm.pdf(x, -3, 2) + 0.7 * stats.norm.pdf(x, 3, 2)) ** gamma

    left = integrate.quad(q, -np.inf, 0.0)[0]
    right = integrate.quad(q, 0.0, np.inf)[0]
    frac = left / (left + right)
    x = sample_annealed_gmm(g, gamma, 30000, seed=3)[:, 0]
    se = np.sqrt(frac * (1 - frac) / len(x))
    assert abs(np.mean(x < 0) - frac) < 4 * se


def test_tilted_single_gaussian():
    mu, v, gamma, c, s = 1.0, 8.0, 2.0, -3.0, 5.0
    g = GmmSpec(np.array([[mu]]), v)
    r = QuadraticReward(np.array([c]), s)
    lam = gamma / v + 1 / s
    m = (gamma * mu / v + c / s) / lam
    x = sample_annealed_gmm(g, gamma, 30000, seed=4, reward=r)[:, 0]
    assert x.mean() == pytest.approx(m, abs=4 * np.sqrt(1 / lam / 30000))
    assert x.var() == pytest.approx(1 / lam, rel=0.04)


def test_annealing_below_one_rejected():
    with pytest.raises(ValueError):
        sample_annealed_gmm(GmmSpec(np.zeros((1, 1)), 1.0), 0.5, 10)


def test_envelope_violation_is_detected(monkeypatch):
    import fkdrift.reference as ref

    monkeypatch.setattr(ref, "annealed_envelope_log_const", lambda g, gamma: -50.0)
    with pytest.raises(EnvelopeViolation):
        sample_annealed_gmm(GmmSpec(np.zeros((1, 2)), 1.0), 2.0, 10, batch=100)


def test_posterior_single_gaussian():
    g = GmmSpec(np.array([[0.0, 4.0]]), 2.0)
    r = QuadraticReward(np.array([6.0, 0.0]), 6.0)
    post = posterior_gmm(g, r)
    assert post.component_variance == pytest.approx(1.5)
    assert_allclose(post.means[0], [1.5, 3.0])


def test_posterior_flat_reward_is_prior():
    g = GmmSpec.random(n_components=4, dim=2, seed=3)
    post = posterior_gmm(g, QuadraticReward(np.zeros(2), 1e14))
    assert_allclose(post.means, g.means, atol=1e-10)
    assert_allclose(post.weights, g.weights, rtol=1e-9)


def test_posterior_weights_by_quadrature():
    g = GmmSpec(np.array([[-5.0], [5.0]]), 3.0, [0.6, 0.4])
    r = QuadraticReward(np.array([2.0]), 10.0)
    post = posterior_gmm(g, r)

    def dens(x, i):
        return g.weights[i] * stats.norm.pdf(x, g.means[i, 0], np.sqrt(3.0)) * np.exp(r.value(np.array([[x]]))[0])

    mass = [integrate.quad(dens, -np.inf, np.inf, args=(i,))[0] for i in range(2)]
    assert_allclose(post.weights, np.array(mass) / sum(mass), rtol=1e-7)


def test_snis_matches_posterior_mean():
    g = GmmSpec.random(n_components=3, dim=2, low=-5, high=5, variance=4.0, seed=5)
    r = QuadraticReward(np.array([1.0, 1.0]), 8.0)
    x, w = snis_posterior_samples(g, r, 100000, seed=6)
    post = posterior_gmm(g, r)
    assert_allclose(w @ x, post.weights @ post.means, atol=0.05)


def test_baoab_free_particle_runs():
    cfg = LangevinConfig(dt=0.1, friction=1.0, burn_in=10, thin=1, seed=0)
    x = baoab_sample(lambda x: np.zeros_like(x), np.zeros((4, 3)), cfg, 40)
    assert x.shape == (40, 3)
    assert np.all(np.isfinite(x))


def test_baoab_harmonic_variance():
    k = 4.0
    cfg = LangevinConfig(dt=0.1, friction=1.0, temperature=1.5, burn_in=200, thin=20, seed=1)
    x = baoab_sample(lambda x: -k * x, np.zeros((400, 1)), cfg, 40000)
    assert x.shape == (40000, 1)
    assert x.var() == pytest.approx(1.5 / k, rel=0.02)


def test_baoab_requires_chain_axis():
    with pytest.raises(ValueError):
        baoab_sample(lambda x: -x, np.zeros(3), LangevinConfig(), 1)


def test_dw4_centre_of_mass_preserved():
    spec = DoubleWellSpec()
    cfg = LangevinConfig(dt=1e-3, burn_in=500, thin=10, seed=2, remove_com=True)
    x = baoab_dw4(spec, 200, cfg, chains=8)
    assert x.shape == (200, 4, 2)
    assert np.max(np.abs(x.mean(axis=1))) <= 1e-10


def test_dw4_rdf_self_consistency():
    spec = DoubleWellSpec()
    mk = lambda seed, T: baoab_dw4(DoubleWellSpec(temperature=T), 2000,
                                    LangevinConfig(dt=5e-3, burn_in=2000, thin=20, seed=seed,
                                                   temperature=T, remove_com=True), chains=50)
    a, b, hot = mk(0, 1.0), mk(1, 1.0), mk(2, 3.0)
    assert rdf_w1(a, b) < 0.5 * rdf_w1(a, hot)
    assert spec.temperature == 1.0


def test_csv_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 3)) * 1e3
    w = np.random.default_rng(1).random(7)
    p = tmp_path / "s.csv"
    write_samples_csv(p, x, w)
    assert p.read_text().splitlines()[0] == "x0,x1,x2,weight"
    rx, rw = read_samples_csv(p)
    assert_array_equal(rx, x)
    assert_array_equal(rw, w)


def test_spec_hash_sensitive_to_arrays():
    a = spec_hash({"m": np.zeros(3), "g": 2.0})
    assert a == spec_hash({"g": 2.0, "m": np.zeros(3)})
    assert a != spec_hash({"m": np.array([0, 0, 1e-12]), "g": 2.0})


def test_cache_hit(tmp_path):
    calls = []

    def gen():
        calls.append(1)
        return np.arange(6.0).reshape(3, 2)

    x1, w1, p1, hit1 = cached_reference(tmp_path, "demo", {"a": 1}, 0, gen)
    x2, w2, p2, hit2 = cached_reference(tmp_path, "demo", {"a": 1}, 0, gen)
    _, _, p3, hit3 = cached_reference(tmp_path, "demo", {"a": 1}, 1, gen)
    assert (hit1, hit2, hit3) == (False, True, False)
    assert p1 == p2 != p3
    assert len(calls) == 2
    assert_array_equal(x1, x2)
    assert_allclose(w2, 1 / 3)
