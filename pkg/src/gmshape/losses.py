"""Training losses and their exact gradients w.r.t. the raw mixture parameters.

All gradients are returned with shape (K, 10), aligned with
:class:`~gmshape.mixture.MixtureParams`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .camera import SILHOUETTE_CUTOFF, projection_terms
from .mixture import MixtureParams, chain_to_raw, constrain, softmax_backward


@dataclass(frozen=True)
class LossConfig:
    t_dist: float = 0.85
    q_points: int = 10_000
    n_views: int = 4
    sample_batch: int = 4096
    w_3d: float = 1.0
    w_dist: float = 1.0
    # the silhouette term is a raw pixel sum (10^2..10^3 at 128x128), so it is
    # down-weighted to stay commensurate with the per-point log-likelihood
    w_sil: float = 0.01

    def __post_init__(self):
        if min(self.w_3d, self.w_dist, self.w_sil) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.q_points < 1 or self.n_views < 1:
            raise ValueError("q_points and n_views must be >= 1")
        if self.t_dist <= 0:
            raise ValueError("t_dist must be positive")

    @property
    def weights(self):
        return (self.w_3d, self.w_dist, self.w_sil)


@dataclass(frozen=True)
class LossReport:
    total: float
    l_3d: float
    l_dist: float
    l_sil: float
    gradient: np.ndarray


def loss_3d(params: MixtureParams, points):
    """Mean negative log-likelihood of ``points`` under the mixture."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("points must be non-empty")
    m = constrain(params)
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    nll, resp_sum, g_mean, g_chol = kernels.nll_grad(points, logw, m.means, m.precision_chol)
    n = len(points)
    g_logits = m.weights - resp_sum / n
    return nll / n, chain_to_raw(params, g_logits, g_mean / n, g_chol / n)


def loss_dist(params: MixtureParams, t: float):
    """Mean squared excess of component-mean norms beyond radius ``t``."""
    if t <= 0:
        raise ValueError("t must be positive")
    mu = params.raw[:, 1:4]
    norm = np.linalg.norm(mu, axis=1)
    excess = np.maximum(norm - t, 0.0)
    K = len(mu)
    value = float(np.sum(excess**2) / K)
    grad = np.zeros_like(params.raw)
    active = excess > 0
    grad[active, 1:4] = (2.0 / K) * (excess[active] / norm[active])[:, None] * mu[active]
    return value, grad


def _view_loss(m, cov, view, q):
    cam, sil = view
    target = sil.values
    if target.shape != (cam.height, cam.width):
        raise ValueError(f"silhouette shape {target.shape} does not match camera {cam.height}x{cam.width}")
    mu2, cov2, J, mu_c = projection_terms(m.means, cov, cam)
    value, _, g_w, g_m2, g_S2 = kernels.silhouette_loss(
        m.weights, mu2, cov2, target, int(q), SILHOUETTE_CUTOFF, True)

    R = cam.rotation
    A = J @ R
    g_cov = np.swapaxes(A, 1, 2) @ g_S2 @ A
    # dL/dJ through cov2 = J (R S R^T) J^T
    H = 2.0 * g_S2 @ J @ (R @ cov @ R.T)
    f = cam.focal_px
    x, y, z = mu_c.T
    g_muc = np.einsum("kij,ki->kj", J, g_m2)
    fz2 = f / z**2
    g_muc[:, 0] -= H[:, 0, 2] * fz2
    g_muc[:, 1] -= H[:, 1, 2] * fz2
    g_muc[:, 2] += (-(H[:, 0, 0] + H[:, 1, 1]) * fz2
                    + 2.0 * f * (H[:, 0, 2] * x + H[:, 1, 2] * y) / z**3)
    return value, g_w, g_muc @ R, g_cov


def loss_silhouette(params: MixtureParams, views, q: int, threads: int = 1):
    """Squared silhouette error summed over pixels, averaged over views."""
    views = list(views)
    if not views:
        raise ValueError("at least one view is required")
    m = constrain(params)
    cov = m.covariances
    if threads > 1 and len(views) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda v: _view_loss(m, cov, v, q), views))
    else:
        results = [_view_loss(m, cov, v, q) for v in views]

    n = len(views)
    value = 0.0
    g_w = np.zeros(m.k)
    g_mu = np.zeros((m.k, 3))
    g_cov = np.zeros((m.k, 3, 3))
    # fixed reduction order keeps threaded runs bit-identical
    for v, gw, gm, gc in results:
        value += v
        g_w += gw
        g_mu += gm
        g_cov += gc
    value /= n
    g_w /= n
    g_mu /= n
    g_cov /= n
    # cov = P^-1, P = L L^T
    g_cov = 0.5 * (g_cov + np.swapaxes(g_cov, 1, 2))
    g_P = -cov @ g_cov @ cov
    g_L = np.tril(2.0 * g_P @ m.precision_chol)
    return value, chain_to_raw(params, softmax_backward(m.weights, g_w), g_mu, g_L)


def total_loss(params: MixtureParams, points, views, config: LossConfig, threads: int = 1) -> LossReport:
    """Weighted sum of the three terms.

    The silhouette term is evaluated only when ``views`` is non-empty;
    otherwise it is reported as 0.
    """
    l3, g3 = loss_3d(params, points)
    ld, gd = loss_dist(params, config.t_dist)
    views = list(views) if views is not None else []
    if views:
        ls, gs = loss_silhouette(params, views, config.q_points, threads=threads)
    else:
        ls, gs = 0.0, np.zeros_like(params.raw)
    w3, wd, ws = config.weights
    total = w3 * l3 + wd * ld + ws * ls
    grad = w3 * g3 + wd * gd + ws * gs
    return LossReport(float(total), float(l3), float(ld), float(ls), grad)
