import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gmshape.mixture import (GaussianMixture3, MixtureParams, constrain, density, dumps, expected_density,
                             load, loads, log_density, mixture_moments, random_mixture, sample, save,
                             unconstrain)


def unit_gaussian():
    return GaussianMixture3([1.0], [[0.0, 0.0, 0.0]], [np.eye(3)])


# constrain ------------------------------------------------------------------

def test_equal_logits_give_equal_weights():
    m = constrain(MixtureParams(np.zeros((4, 10))))
    np.testing.assert_allclose(m.weights, 0.25, rtol=0, atol=1e-15)


def test_zero_raw_gives_identity_covariance():
    m = constrain(MixtureParams(np.zeros((1, 10))))
    np.testing.assert_array_equal(m.precision_chol[0], np.eye(3))
    np.testing.assert_allclose(m.covariances[0], np.eye(3), atol=1e-15)


def test_log_logits_give_proportional_weights():
    raw = np.zeros((2, 10))
    raw[:, 0] = [math.log(1.0), math.log(3.0)]
    np.testing.assert_allclose(constrain(MixtureParams(raw)).weights, [0.25, 0.75], rtol=1e-15)


def test_constrain_layout():
    raw = np.arange(10, dtype=float)[None] * 0.1
    m = constrain(MixtureParams(raw))
    np.testing.assert_array_equal(m.means[0], raw[0, 1:4])
    L = m.precision_chol[0]
    np.testing.assert_allclose(np.diag(L), np.exp(raw[0, 4:7]))
    assert (L[1, 0], L[2, 0], L[2, 1]) == tuple(raw[0, 7:10])
    assert L[0, 1] == L[0, 2] == L[1, 2] == 0.0


def test_diagonal_is_clamped():
    raw = np.zeros((1, 10))
    raw[0, 4:7] = [-50.0, 50.0, 0.0]
    d = np.diag(constrain(MixtureParams(raw)).precision_chol[0])
    np.testing.assert_allclose(d, [1e-6, 1e6, 1.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 10), elements=st.floats(-3, 3)))
def test_constrain_unconstrain_round_trip(raw):
    m = constrain(MixtureParams(raw))
    assert abs(m.weights.sum() - 1.0) <= 1e-9
    assert np.all(np.linalg.eigvalsh(m.precisions) > 0)
    m2 = constrain(unconstrain(m))
    np.testing.assert_allclose(m2.weights, m.weights, rtol=1e-12)
    np.testing.assert_allclose(m2.means, m.means, rtol=1e-12)
    np.testing.assert_allclose(m2.precision_chol, m.precision_chol, rtol=1e-12, atol=0)


# validation -------------------------------------------------------------------

def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        GaussianMixture3([0.5, 0.6], np.zeros((2, 3)), [np.eye(3)] * 2)


def test_rejects_upper_triangular_factor():
    L = np.eye(3)
    L[0, 1] = 0.1
    with pytest.raises(ValueError):
        GaussianMixture3([1.0], np.zeros((1, 3)), [L])


def test_rejects_non_positive_diagonal():
    with pytest.raises(ValueError):
        GaussianMixture3([1.0], np.zeros((1, 3)), [np.diag([1.0, 0.0, 1.0])])


def test_mixture_is_immutable():
    m = unit_gaussian()
    with pytest.raises(ValueError):
        m.means[0, 0] = 1.0


# density ---------------------------------------------------------------------

def test_standard_normal_peak():
    assert density(unit_gaussian(), [0, 0, 0]) == pytest.approx((2 * math.pi) ** -1.5, rel=1e-14)
    assert log_density(unit_gaussian(), [0, 0, 0]) == pytest.approx(-1.5 * math.log(2 * math.pi), rel=1e-14)


def test_duplicated_component_gives_same_density(rng):
    one = unit_gaussian()
    two = GaussianMixture3([0.5, 0.5], np.zeros((2, 3)), [np.eye(3)] * 2)
    x = rng.normal(size=(50, 3))
    np.testing.assert_allclose(density(two, x), density(one, x), rtol=1e-14)


def test_density_matches_scipy(rng):
    from scipy.stats import multivariate_normal

    m = random_mixture(4, rng)
    x = rng.normal(size=(100, 3))
    ref = sum(w * multivariate_normal(mu, c).pdf(x) for w, mu, c in zip(m.weights, m.means, m.covariances))
    np.testing.assert_allclose(density(m, x), ref, rtol=1e-10)


def test_log_density_matches_direct(rng):
    m = random_mixture(5, rng)
    x = rng.normal(size=(100, 3))
    assert np.max(np.abs(log_density(m, x) - np.log(density(m, x)))) < 1e-10


def test_log_density_far_away_is_finite():
    v = log_density(unit_gaussian(), [50.0, 0.0, 0.0])
    assert math.isfinite(v)
    assert v == pytest.approx(-1.5 * math.log(2 * math.pi) - 1250.0, rel=1e-12)
    assert density(unit_gaussian(), [50.0, 0.0, 0.0]) == 0.0


def test_density_integrates_to_one_mc(rng):
    # importance sampling from a broad Gaussian proposal
    m = random_mixture(3, rng)
    s = 2.0
    x = rng.normal(0.0, s, size=(1_000_000, 3))
    q = np.exp(-0.5 * (x * x).sum(1) / s**2) / (2 * math.pi * s * s) ** 1.5
    assert np.mean(density(m, x) / q) == pytest.approx(1.0, abs=1e-2)


# expected density ------------------------------------------------------------------

def test_expected_density_unit():
    assert expected_density(unit_gaussian()) == pytest.approx((4 * math.pi) ** -1.5, rel=1e-14)


@pytest.mark.parametrize("sigma", [0.1, 0.5, 2.0])
def test_expected_density_scaling(sigma):
    m = GaussianMixture3.from_covariances([1.0], [[0.3, -0.2, 1.0]], [sigma**2 * np.eye(3)])
    assert expected_density(m) == pytest.approx((4 * math.pi) ** -1.5 * sigma**-3, rel=1e-12)


def test_expected_density_equals_integral_of_square(rng):
    m = random_mixture(3, rng)
    s = 2.0
    x = rng.normal(0.0, s, size=(1_000_000, 3))
    q = np.exp(-0.5 * (x * x).sum(1) / s**2) / (2 * math.pi * s * s) ** 1.5
    assert np.mean(density(m, x) ** 2 / q) == pytest.approx(expected_density(m), rel=2e-2)


def test_permutation_invariance(rng):
    m = random_mixture(6, rng)
    p = m.permute(rng.permutation(6))
    x = rng.normal(size=(20, 3))
    assert expected_density(p) == pytest.approx(expected_density(m), rel=1e-13)
    np.testing.assert_allclose(log_density(p, x), log_density(m, x), rtol=1e-13)
    np.testing.assert_allclose(mixture_moments(p)[1], mixture_moments(m)[1], rtol=1e-12, atol=1e-15)


def test_uniform_scaling_law(rng):
    m = random_mixture(4, rng)
    s = 1.7
    ms = m.transformed(np.eye(3), np.zeros(3), s)
    x = rng.normal(size=(30, 3))
    np.testing.assert_allclose(density(ms, s * x), density(m, x) * s**-3, rtol=1e-9)
    assert expected_density(ms) == pytest.approx(expected_density(m) * s**-3, rel=1e-9)


# moments and sampling ----------------------------------------------------------------

def test_single_component_moments():
    cov = np.array([[0.2, 0.05, 0.0], [0.05, 0.1, 0.01], [0.0, 0.01, 0.3]])
    m = GaussianMixture3.from_covariances([1.0], [[1.0, 2.0, 3.0]], [cov])
    mean, c = mixture_moments(m)
    np.testing.assert_allclose(mean, [1, 2, 3], rtol=1e-15)
    np.testing.assert_allclose(c, cov, rtol=1e-12, atol=1e-15)


def test_two_point_moments():
    eps = 1e-3
    m = GaussianMixture3.from_covariances([0.5, 0.5], [[1, 0, 0], [-1, 0, 0]], [eps * np.eye(3)] * 2)
    mean, c = mixture_moments(m)
    np.testing.assert_allclose(mean, 0.0, atol=1e-15)
    np.testing.assert_allclose(c, eps * np.eye(3) + np.diag([1.0, 0, 0]), atol=1e-12)


def test_sample_degenerate_component():
    m = GaussianMixture3.from_covariances([1.0], [[0.5, -1.0, 2.0]], [1e-12 * np.eye(3)])
    x = sample(m, 1, seed=3)
    assert np.linalg.norm(x[0] - [0.5, -1.0, 2.0]) < 1e-5


def test_sample_deterministic(rng):
    m = random_mixture(3, rng)
    np.testing.assert_array_equal(sample(m, 100, 7), sample(m, 100, 7))
    assert not np.array_equal(sample(m, 100, 7), sample(m, 100, 8))


def test_sample_moments(rng):
    m = random_mixture(3, rng)
    x = sample(m, 1_000_000, 0)
    mean, cov = mixture_moments(m)
    scale = np.sqrt(np.trace(cov))
    assert np.linalg.norm(x.mean(0) - mean) <= 0.01 * max(np.linalg.norm(mean), scale)
    np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.01, atol=0.01 * np.abs(cov).max())


# file format ------------------------------------------------------------------------

def test_gmm_round_trip_exact(rng, tmp_path):
    m = random_mixture(5, rng)
    save(m, tmp_path / "m.gmm")
    m2 = load(tmp_path / "m.gmm")
    np.testing.assert_array_equal(m2.weights, m.weights)
    np.testing.assert_array_equal(m2.means, m.means)
    np.testing.assert_array_equal(m2.precision_chol, m.precision_chol)
    assert dumps(m2) == dumps(m)


def test_gmm_format_fields(rng):
    import json

    m = random_mixture(2, rng)
    doc = json.loads(dumps(m))
    assert doc["k"] == 2
    c = doc["components"][1]
    L = m.precision_chol[1]
    assert c["precision_factor_lower"] == [L[0, 0], L[1, 0], L[1, 1], L[2, 0], L[2, 1], L[2, 2]]
    assert c["weight"] == m.weights[1]


def test_gmm_k_mismatch_rejected(rng):
    text = dumps(random_mixture(2, rng)).replace('"k": 2', '"k": 3')
    with pytest.raises(ValueError):
        loads(text)
