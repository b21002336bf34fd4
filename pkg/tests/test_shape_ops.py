import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gmshape.mixture import GaussianMixture3, mixture_moments, random_mixture
from gmshape.shape_ops import (RigidTransform, align, l2_distance_sq, merge_cost, merge_pair, reduce,
                               sorted_eigh)



def stretched(rng, k=5):
    m = random_mixture(k, rng, spread=1.0, scale=(0.05, 0.2))
    S = np.diag([1.5, 0.8, 0.3])
    return GaussianMixture3.from_covariances(m.weights, m.means @ S, S @ m.covariances @ S)


def test_rigid_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), np.zeros(3), scale=0.0)


def test_inverse_and_compose(rng):
    T = RigidTransform(Rotation.random(random_state=1).as_matrix(), [1, 2, 3], 1.5)
    I = T.compose(T.inverse())
    np.testing.assert_allclose(I.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(I.translation, 0, atol=1e-12)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(x)), x, atol=1e-12)


def test_sorted_eigh_descending():
    vals, vecs = sorted_eigh(np.diag([1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(vals, [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])


def test_align_identity(rng):
    a = stretched(rng)
    res = align(a, a)
    np.testing.assert_allclose(res.transform.rotation, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(res.transform.translation, 0, atol=1e-10)
    assert res.residual <= 1e-10
    assert not res.ambiguous
    assert len(res.candidates) == 4


def test_align_recovers_rotation(rng):
    a = stretched(rng)
    R0 = Rotation.random(random_state=3).as_matrix()
    t0 = np.array([0.2, -0.4, 1.0])
    b = a.transformed(R0, t0)
    res = align(a, b)
    # T(b) = a  =>  R = R0^-1
    err = Rotation.from_matrix(res.transform.rotation @ R0).magnitude()
    assert err < 1e-3
    assert res.residual <= 1e-10
    np.testing.assert_allclose(res.transform.translation, -R0.T @ t0, atol=1e-9)


def test_align_scale(rng):
    a = stretched(rng)
    b = a.transformed(np.eye(3), np.zeros(3), 2.0)
    res = align(a, b, with_scale=True)
    assert res.transform.scale == pytest.approx(0.5, abs=1e-6)
    assert res.residual <= 1e-10


def test_align_inverse_consistent(rng):
    a = stretched(rng)
    b = a.transformed(Rotation.random(random_state=5).as_matrix(), [0.1, 0.2, 0.3])
    ab = align(a, b).transform
    ba = align(b, a).transform
    I = ab.compose(ba)
    np.testing.assert_allclose(I.rotation, np.eye(3), atol=1e-6)
    np.testing.assert_allclose(I.translation, 0, atol=1e-6)


def test_align_flags_isotropic():
    m = GaussianMixture3.from_covariances([1.0], [[0, 0, 0]], [0.1 * np.eye(3)])
    assert align(m, m).ambiguous


def test_l2_distance(rng):
    a = random_mixture(3, rng)
    assert l2_distance_sq(a, a) == pytest.approx(0.0, abs=1e-12)
    b = a.transformed(np.eye(3), [0.5, 0, 0])
    assert l2_distance_sq(a, b) > 0


# reduction ----------------------------------------------------------------------

def test_merge_identical():
    cov = np.diag([0.1, 0.2, 0.3])
    mu = np.array([1.0, 2.0, 3.0])
    w, m, c = merge_pair(0.3, mu, cov, 0.2, mu, cov)
    assert w == pytest.approx(0.5)
    np.testing.assert_allclose(m, mu)
    np.testing.assert_allclose(c, cov)
    assert merge_cost(0.3, mu, cov, 0.2, mu, cov) == pytest.approx(0.0, abs=1e-14)


def test_merge_two_points():
    eps = 1e-3
    w, m, c = merge_pair(0.5, np.array([1.0, 0, 0]), eps * np.eye(3), 0.5, np.array([-1.0, 0, 0]), eps * np.eye(3))
    np.testing.assert_allclose(m, 0.0, atol=1e-15)
    np.testing.assert_allclose(c, eps * np.eye(3) + np.diag([1.0, 0, 0]), atol=1e-15)


def test_reduce_to_same_k(rng):
    m = random_mixture(4, rng)
    assert reduce(m, 4) is m


def test_reduce_bad_k(rng):
    m = random_mixture(4, rng)
    with pytest.raises(ValueError):
        reduce(m, 0)
    with pytest.raises(ValueError):
        reduce(m, 5)


def test_reduce_preserves_moments_at_every_step(rng):
    m = random_mixture(24, rng)
    mean, cov = mixture_moments(m)
    history = []
    r = reduce(m, 1, history)
    assert [h.k for h in history] == list(range(23, 0, -1))
    for h in history:
        hm, hc = mixture_moments(h)
        np.testing.assert_allclose(hm, mean, rtol=0, atol=1e-9)
        np.testing.assert_allclose(hc, cov, rtol=0, atol=1e-9)
        assert abs(h.weights.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(r.covariances[0], cov, atol=1e-9)


def test_reduce_merges_cheapest_pair():
    # two nearly identical components merge first; the distant one survives
    covs = [0.01 * np.eye(3)] * 3
    m = GaussianMixture3.from_covariances([0.3, 0.3, 0.4], [[0, 0, 0], [0.001, 0, 0], [5, 0, 0]], covs)
    r = reduce(m, 2)
    np.testing.assert_allclose(sorted(r.weights), [0.4, 0.6])
    assert any(np.allclose(mu, [5, 0, 0]) for mu in r.means)
