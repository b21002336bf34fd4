"""Relative pose between two mixtures and level-of-detail reduction."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .mixture import GaussianMixture3, cross_term, mixture_moments

EIGEN_GAP = 1e-9


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be proper orthonormal")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def apply_mixture(self, m: GaussianMixture3) -> GaussianMixture3:
        return m.transformed(self.rotation, self.translation, self.scale)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.scale * self.rotation @ other.translation + self.translation,
                              self.scale * other.scale)

    def as_row(self):
        """R (row-major) followed by t: 12 numbers."""
        return [*self.rotation.ravel(), *self.translation]


@dataclass(frozen=True, eq=False)
class AlignResult:
    transform: RigidTransform
    residual: float
    ambiguous: bool
    candidates: list = field(default_factory=list)  # (RigidTransform, residual) for every candidate


def l2_distance_sq(a: GaussianMixture3, b: GaussianMixture3) -> float:
    """Closed-form integral of (f_a - f_b)^2."""
    return max(cross_term(a, a) + cross_term(b, b) - 2.0 * cross_term(a, b), 0.0)


def sorted_eigh(cov):
    """Eigen-decomposition with descending eigenvalues.

    Ties are broken by lexicographic comparison of the eigenvectors after
    fixing each vector's sign so its largest-magnitude entry is positive.
    """
    vals, vecs = np.linalg.eigh(cov)
    vecs = vecs.copy()
    for i in range(3):
        j = np.argmax(np.abs(vecs[:, i]))
        if vecs[j, i] < 0:
            vecs[:, i] *= -1
    order = sorted(range(3), key=lambda i: (-vals[i], tuple(-vecs[:, i])))
    return vals[order], vecs[:, order]


_SIGNS = [np.diag(s) for s in itertools.product((1.0, -1.0), repeat=3)]


def align(a: GaussianMixture3, b: GaussianMixture3, with_scale: bool = False) -> AlignResult:
    """Transform T with T(b) ~ a, from whole-mixture moments.

    Principal axes are matched in order; the four proper sign choices are
    scored by the closed-form L2 distance between ``a`` and ``T(b)``.
    """
    mean_a, cov_a = mixture_moments(a)
    mean_b, cov_b = mixture_moments(b)
    vals_a, Ua = sorted_eigh(cov_a)
    vals_b, Ub = sorted_eigh(cov_b)
    gaps = np.concatenate([np.abs(np.diff(vals_a)), np.abs(np.diff(vals_b))])
    ambiguous = bool(np.any(gaps <= EIGEN_GAP * max(vals_a[0], vals_b[0], 1e-300)))
    scale = float(np.sqrt(np.trace(cov_a) / np.trace(cov_b))) if with_scale else 1.0

    candidates = []
    for D in _SIGNS:
        R = Ua @ D @ Ub.T
        if np.linalg.det(R) < 0:
            continue
        # re-orthonormalise against roundoff
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        T = RigidTransform(R, mean_a - scale * R @ mean_b, scale)
        candidates.append((T, l2_distance_sq(a, T.apply_mixture(b))))
    best_T, best_res = min(candidates, key=lambda c: c[1])
    return AlignResult(best_T, best_res, ambiguous, candidates)


# Reduction ---------------------------------------------------------------------

def merge_pair(w1, mu1, cov1, w2, mu2, cov2):
    """Moment-preserving merge of two weighted Gaussians."""
    w = w1 + w2
    a1, a2 = w1 / w, w2 / w
    mu = a1 * mu1 + a2 * mu2
    d = mu1 - mu2
    cov = a1 * cov1 + a2 * cov2 + a1 * a2 * np.outer(d, d)
    return w, mu, 0.5 * (cov + cov.T)


def merge_cost(w1, mu1, cov1, w2, mu2, cov2, logdet1=None, logdet2=None):
    """Upper bound on the KL divergence incurred by merging the pair."""
    w, _, cov = merge_pair(w1, mu1, cov1, w2, mu2, cov2)
    if logdet1 is None:
        logdet1 = np.linalg.slogdet(cov1)[1]
    if logdet2 is None:
        logdet2 = np.linalg.slogdet(cov2)[1]
    return 0.5 * (w * np.linalg.slogdet(cov)[1] - w1 * logdet1 - w2 * logdet2)


def reduce(m: GaussianMixture3, k_target: int, history: list | None = None) -> GaussianMixture3:
    """Greedily merge the cheapest pair until ``k_target`` components remain.

    If ``history`` is a list, each intermediate mixture is appended to it.
    """
    if not 1 <= k_target <= m.k:
        raise ValueError(f"k_target must be in [1, {m.k}], got {k_target}")
    if k_target == m.k:
        return m
    w = list(m.weights)
    mu = list(m.means)
    cov = list(m.covariances)
    logdet = [np.linalg.slogdet(c)[1] for c in cov]
    alive = [True] * m.k
    version = [0] * m.k
    heap = []
    for i in range(m.k):
        for j in range(i + 1, m.k):
            heap.append((merge_cost(w[i], mu[i], cov[i], w[j], mu[j], cov[j], logdet[i], logdet[j]), i, j, 0, 0))
    heapq.heapify(heap)

    count = m.k
    while count > k_target:
        cost, i, j, vi, vj = heapq.heappop(heap)
        if not (alive[i] and alive[j]) or vi != version[i] or vj != version[j]:
            continue
        w[i], mu[i], cov[i] = merge_pair(w[i], mu[i], cov[i], w[j], mu[j], cov[j])
        logdet[i] = np.linalg.slogdet(cov[i])[1]
        version[i] += 1
        alive[j] = False
        count -= 1
        for o in range(len(w)):
            if alive[o] and o != i:
                a, b = min(i, o), max(i, o)
                heapq.heappush(heap, (merge_cost(w[a], mu[a], cov[a], w[b], mu[b], cov[b], logdet[a], logdet[b]),
                                      a, b, version[a], version[b]))
        if history is not None:
            history.append(_collect(w, mu, cov, alive))
    return _collect(w, mu, cov, alive)


def _collect(w, mu, cov, alive):
    idx = [i for i, a in enumerate(alive) if a]
    weights = np.array([w[i] for i in idx])
    return GaussianMixture3.from_covariances(weights / weights.sum(), np.array([mu[i] for i in idx]),
                                             np.array([cov[i] for i in idx]))
