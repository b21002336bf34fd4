"""Gaussian mixture shape representation.

A shape is a weighted sum of K full-covariance 3D Gaussians. Each component
stores the lower-triangular Cholesky factor ``L`` of its *precision*, so the
covariance is ``(L L^T)^-1`` and is only ever obtained by a triangular solve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from . import kernels

LOG_2PI = math.log(2.0 * math.pi)

# Bounds on exp(a_L diagonal); keeps every component non-degenerate.
DIAG_MIN = 1e-6
DIAG_MAX = 1e6

# Raw parameter layout per component (10 scalars).
A_PI = 0
A_MU = slice(1, 4)
A_DIAG = slice(4, 7)
A_OFF = slice(7, 10)
# (row, col) of the off-diagonal entries l21, l31, l32
OFF_ROWS = np.array([1, 2, 2])
OFF_COLS = np.array([0, 0, 1])
DIAG_IDX = np.arange(3)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    precision_factor: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianMixture3:
    """K weighted 3D Gaussians.

    Attributes
    ----------
    weights : (K,) array
        Mixing coefficients, summing to one.
    means : (K, 3) array
    precision_chol : (K, 3, 3) array
        Lower-triangular factors with positive diagonal; precision = L L^T.
    """

    weights: np.ndarray
    means: np.ndarray
    precision_chol: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        mu = _frozen(self.means).reshape(-1, 3)
        L = _frozen(self.precision_chol).reshape(-1, 3, 3)
        if not (len(w) == len(mu) == len(L)) or len(w) == 0:
            raise ValueError("weights, means and precision factors must have the same length K >= 1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if np.any(np.triu(L, 1) != 0):
            raise ValueError("precision factors must be lower triangular")
        if np.any(np.diagonal(L, axis1=1, axis2=2) <= 0):
            raise ValueError("precision factor diagonals must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "precision_chol", L)

    @classmethod
    def from_covariances(cls, weights, means, covariances):
        """Build a mixture from covariance matrices (must be SPD)."""
        cov = np.asarray(covariances, dtype=np.float64).reshape(-1, 3, 3)
        P = np.linalg.inv(cov)
        P = 0.5 * (P + np.swapaxes(P, 1, 2))
        L = np.linalg.cholesky(P)
        return cls(np.asarray(weights, dtype=np.float64), means, L)

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        return cls(
            np.array([c.weight for c in comps]),
            np.array([c.mean for c in comps]),
            np.array([c.precision_factor for c in comps]),
        )

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def components(self):
        return [GaussianComponent(float(w), m, L) for w, m, L in zip(self.weights, self.means, self.precision_chol)]

    @property
    def precisions(self):
        L = self.precision_chol
        return L @ np.swapaxes(L, 1, 2)

    @property
    def covariances(self):
        Linv = np.linalg.solve(self.precision_chol, np.broadcast_to(np.eye(3), self.precision_chol.shape))
        cov = np.swapaxes(Linv, 1, 2) @ Linv
        return 0.5 * (cov + np.swapaxes(cov, 1, 2))

    @property
    def log_dets(self):
        """log det of each covariance."""
        return -2.0 * np.log(np.diagonal(self.precision_chol, axis1=1, axis2=2)).sum(axis=1)

    def permute(self, order) -> "GaussianMixture3":
        order = np.asarray(order)
        return GaussianMixture3(self.weights[order], self.means[order], self.precision_chol[order])

    def transformed(self, rotation, translation, scale=1.0) -> "GaussianMixture3":
        """Push the mixture forward through x -> scale * R x + t."""
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        cov = scale**2 * (R @ self.covariances @ R.T)
        return GaussianMixture3.from_covariances(self.weights, scale * self.means @ R.T + t, cov)


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Unconstrained parameters, shape (K, 10).

    Per component: ``[a_pi, a_mu (3), a_L diagonal (3), a_L l21, l31, l32]``.
    """

    raw: np.ndarray

    def __post_init__(self):
        raw = _frozen(self.raw)
        if raw.ndim == 1:
            raw = _frozen(raw.reshape(-1, 10))
        if raw.ndim != 2 or raw.shape[1] != 10:
            raise ValueError("raw parameters must have shape (K, 10)")
        object.__setattr__(self, "raw", raw)

    @property
    def k(self) -> int:
        return self.raw.shape[0]

    def flat(self):
        return self.raw.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec):
        return cls(np.asarray(vec, dtype=np.float64).reshape(-1, 10))


def _chol_from_raw(raw):
    K = raw.shape[0]
    L = np.zeros((K, 3, 3))
    L[:, DIAG_IDX, DIAG_IDX] = np.clip(np.exp(raw[:, A_DIAG]), DIAG_MIN, DIAG_MAX)
    L[:, OFF_ROWS, OFF_COLS] = raw[:, A_OFF]
    return L


def constrain(params: MixtureParams) -> GaussianMixture3:
    raw = params.raw
    return GaussianMixture3(softmax(raw[:, A_PI]), raw[:, A_MU], _chol_from_raw(raw))


def unconstrain(m: GaussianMixture3) -> MixtureParams:
    raw = np.empty((m.k, 10))
    with np.errstate(divide="ignore"):
        raw[:, A_PI] = np.log(m.weights)
    raw[:, A_MU] = m.means
    raw[:, A_DIAG] = np.log(m.precision_chol[:, DIAG_IDX, DIAG_IDX])
    raw[:, A_OFF] = m.precision_chol[:, OFF_ROWS, OFF_COLS]
    return MixtureParams(raw)


def chain_to_raw(params: MixtureParams, g_logits, g_mean, g_chol):
    """Map gradients w.r.t. (softmax logits, means, L) to the raw layout."""
    raw = params.raw
    g = np.zeros_like(raw)
    g[:, A_PI] = g_logits
    g[:, A_MU] = g_mean
    d = np.exp(raw[:, A_DIAG])
    active = (d >= DIAG_MIN) & (d <= DIAG_MAX)
    g[:, A_DIAG] = np.where(active, g_chol[:, DIAG_IDX, DIAG_IDX] * d, 0.0)
    g[:, A_OFF] = g_chol[:, OFF_ROWS, OFF_COLS]
    return g


def softmax_backward(weights, g_weights):
    """Gradient w.r.t. softmax logits given the gradient w.r.t. the weights."""
    return weights * (g_weights - np.dot(weights, g_weights))


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 3), x.ndim == 1


def density(m: GaussianMixture3, x):
    """Mixture density at one point (3,) or many points (N, 3)."""
    pts, single = _as_points(x)
    delta = pts[:, None, :] - m.means[None]
    y = np.einsum("nki,kij->nkj", delta, m.precision_chol)
    norm = np.prod(np.diagonal(m.precision_chol, axis1=1, axis2=2), axis=1) * (2.0 * math.pi) ** -1.5
    vals = np.exp(-0.5 * np.einsum("nkj,nkj->nk", y, y)) @ (m.weights * norm)
    return float(vals[0]) if single else vals


def log_density(m: GaussianMixture3, x):
    pts, single = _as_points(x)
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    vals = kernels.log_mixture_pdf(pts, logw, m.means, m.precision_chol)
    return float(vals[0]) if single else vals


def gaussian_pdf(x, mean, cov):
    """Density of N(mean, cov) at x; cov may be a batch aligned with x."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    diff = x - mean
    c = np.linalg.cholesky(cov)
    z = np.linalg.solve(c, diff[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(c, axis1=-2, axis2=-1)).sum(axis=-1)
    return np.exp(-0.5 * (z * z).sum(axis=-1) - 0.5 * logdet - 0.5 * d * LOG_2PI)


def cross_term(a: GaussianMixture3, b: GaussianMixture3) -> float:
    """Closed-form integral of f_a * f_b over R^3."""
    ca, cb = a.covariances, b.covariances
    diff = a.means[:, None, :] - b.means[None, :, :]
    cov = ca[:, None] + cb[None, :]
    vals = gaussian_pdf(diff, np.zeros(3), cov)
    return float(a.weights @ vals @ b.weights)


def expected_density(m: GaussianMixture3) -> float:
    """E[f(X)] for X ~ f, i.e. the integral of f squared."""
    return cross_term(m, m)


def mixture_moments(m: GaussianMixture3):
    """Whole-mixture mean and covariance (law of total covariance)."""
    w = m.weights
    mean = w @ m.means
    second = np.einsum("k,kij->ij", w, m.covariances + m.means[:, :, None] * m.means[:, None, :])
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def sample(m: GaussianMixture3, n: int, seed: int):
    """Draw n i.i.d. points (n, 3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(m.k, size=n, p=m.weights)
    z = rng.standard_normal((n, 3))
    # x = mu + L^-T z
    Lt = np.swapaxes(m.precision_chol, 1, 2)
    out = np.empty((n, 3))
    for k in np.unique(comp):
        sel = comp == k
        out[sel] = m.means[k] + np.linalg.solve(Lt[k], z[sel].T).T
    return out


def random_mixture(k: int, rng, spread=1.0, scale=(0.1, 0.5)) -> GaussianMixture3:
    """Random valid mixture: means in a cube, random rotated anisotropic covariances."""
    from scipy.spatial.transform import Rotation

    weights = rng.dirichlet(np.full(k, 2.0))
    means = rng.uniform(-spread, spread, (k, 3))
    R = Rotation.random(k, random_state=rng).as_matrix()
    sig = rng.uniform(scale[0], scale[1], (k, 3))
    cov = R @ (sig[:, :, None] ** 2 * np.eye(3)) @ np.swapaxes(R, 1, 2)
    return GaussianMixture3.from_covariances(weights, means, cov)


# GMM text files ---------------------------------------------------------------

def _num(v):
    return format(float(v), ".17g")


def dumps(m: GaussianMixture3) -> str:
    lines = ["{", f'  "k": {m.k},', '  "components": [']
    rows = []
    for w, mu, L in zip(m.weights, m.means, m.precision_chol):
        lower = [L[0, 0], L[1, 0], L[1, 1], L[2, 0], L[2, 1], L[2, 2]]
        rows.append(
            '    {"weight": ' + _num(w)
            + ', "mean": [' + ", ".join(_num(v) for v in mu) + "]"
            + ', "precision_factor_lower": [' + ", ".join(_num(v) for v in lower) + "]}"
        )
    lines.append(",\n".join(rows))
    lines += ["  ]", "}"]
    return "\n".join(lines) + "\n"


def loads(text: str) -> GaussianMixture3:
    doc = json.loads(text)
    comps = doc["components"]
    if "k" in doc and doc["k"] != len(comps):
        raise ValueError(f"k={doc['k']} does not match {len(comps)} components")
    L = np.zeros((len(comps), 3, 3))
    rows, cols = np.tril_indices(3)
    for i, c in enumerate(comps):
        L[i, rows, cols] = c["precision_factor_lower"]
    w = np.array([c["weight"] for c in comps], dtype=np.float64)
    return GaussianMixture3(w, np.array([c["mean"] for c in comps], dtype=np.float64), L)


def save(m: GaussianMixture3, path) -> None:
    Path(path).write_text(dumps(m))


def load(path) -> GaussianMixture3:
    return loads(Path(path).read_text())
