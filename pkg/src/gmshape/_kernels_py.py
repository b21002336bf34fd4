"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and semantics; :mod:`gmshape.kernels` picks one at import time.
"""

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)

_CHUNK = 2048


def _component_terms(points, log_weights, means, chol):
    # delta: (n, K, 3); y = L^T delta: (n, K, 3); lp: (n, K)
    delta = points[:, None, :] - means[None, :, :]
    y = np.einsum("nki,kij->nkj", delta, chol)
    logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    lp = log_weights[None, :] + logdet[None, :] - 1.5 * LOG_2PI - 0.5 * np.einsum("nkj,nkj->nk", y, y)
    return delta, y, lp


def log_mixture_pdf(points, log_weights, means, chol):
    points = np.ascontiguousarray(points, dtype=np.float64)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _CHUNK):
        _, _, lp = _component_terms(points[start:start + _CHUNK], log_weights, means, chol)
        out[start:start + _CHUNK] = logsumexp(lp, axis=1)
    return out


def nll_grad(points, log_weights, means, chol):
    """Summed negative log-likelihood and its derivatives.

    Returns ``(nll, resp_sum, g_mean, g_chol)`` where ``resp_sum[k]`` is the
    summed responsibility of component k and the gradients are taken with
    respect to the means and the lower-triangular precision factors.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    K = means.shape[0]
    nll = 0.0
    resp_sum = np.zeros(K)
    g_mean = np.zeros((K, 3))
    g_chol = np.zeros((K, 3, 3))
    for start in range(0, points.shape[0], _CHUNK):
        delta, y, lp = _component_terms(points[start:start + _CHUNK], log_weights, means, chol)
        lse = logsumexp(lp, axis=1)
        nll -= lse.sum()
        r = np.exp(lp - lse[:, None])
        resp_sum += r.sum(axis=0)
        # d log phi / d mu = L y ; d log phi / d L_ij = 1/L_ii [i==j] - delta_i y_j
        ry = r[:, :, None] * y
        g_mean -= np.einsum("kij,nkj->ki", chol, ry)
        g_chol += np.einsum("nki,nkj->kij", delta, ry)
    g_chol = np.tril(g_chol)
    diag = np.diagonal(chol, axis1=1, axis2=2)
    idx = np.arange(3)
    g_chol[:, idx, idx] -= resp_sum[:, None] / diag
    return nll, resp_sum, g_mean, g_chol


def silhouette_loss(weights, means2, cov2, target, q, cutoff, want_grad=True):
    """Squared error between the pseudo soft silhouette and ``target``.

    Pixel (r, c) is evaluated at its center ``(c + 0.5, r + 0.5)``. A
    component contributes only where its squared Mahalanobis distance is at
    most ``cutoff``.
    """
    height, width = target.shape
    K = weights.shape[0]
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
    sinv = np.empty((K, 2, 2))
    sinv[:, 0, 0] = cov2[:, 1, 1] / det
    sinv[:, 1, 1] = cov2[:, 0, 0] / det
    sinv[:, 0, 1] = sinv[:, 1, 0] = -0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0]) / det
    coef = 1.0 / (2.0 * np.pi * np.sqrt(det))

    dx = u[None, None, :] - means2[:, 0, None, None]  # (K, 1, W)
    dy = v[None, :, None] - means2[:, 1, None, None]  # (K, H, 1)
    maha = (sinv[:, 0, 0, None, None] * dx * dx
            + 2.0 * sinv[:, 0, 1, None, None] * dx * dy
            + sinv[:, 1, 1, None, None] * dy * dy)
    phi = np.where(maha <= cutoff, np.exp(-0.5 * np.minimum(maha, cutoff)), 0.0) * coef[:, None, None]
    d = np.einsum("k,khw->hw", weights, phi)

    dc = np.minimum(d, 1.0)
    rest = np.power(1.0 - dc, q - 1)
    shat = 1.0 - rest * (1.0 - dc)
    diff = shat - target
    loss = float(np.sum(diff * diff))
    if not want_grad:
        return loss, shat, None, None, None

    g_d = np.where(d < 1.0, 2.0 * diff * q * rest, 0.0)
    e = phi * g_d[None]  # (K, H, W)
    g_w = e.sum(axis=(1, 2))
    vx = sinv[:, 0, 0, None, None] * dx + sinv[:, 0, 1, None, None] * dy
    vy = sinv[:, 1, 0, None, None] * dx + sinv[:, 1, 1, None, None] * dy
    g_m = np.empty((K, 2))
    g_m[:, 0] = weights * np.sum(e * vx, axis=(1, 2))
    g_m[:, 1] = weights * np.sum(e * vy, axis=(1, 2))
    g_S = np.empty((K, 2, 2))
    g_S[:, 0, 0] = np.sum(e * vx * vx, axis=(1, 2))
    g_S[:, 1, 1] = np.sum(e * vy * vy, axis=(1, 2))
    g_S[:, 0, 1] = g_S[:, 1, 0] = np.sum(e * vx * vy, axis=(1, 2))
    g_S = 0.5 * weights[:, None, None] * (g_S - g_w[:, None, None] * sinv)
    return loss, shat, g_w, g_m, g_S


def rasterize_triangles(tri2d, width, height):
    """Binary coverage of pixel centers by 2D triangles, boundary inclusive."""
    image = np.zeros((height, width), dtype=np.uint8)
    for tri in np.asarray(tri2d, dtype=np.float64):
        (x0, y0), (x1, y1), (x2, y2) = tri
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        c0 = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
        c1 = min(int(np.floor(max(x0, x1, x2) - 0.5)), width - 1)
        r0 = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
        r1 = min(int(np.floor(max(y0, y1, y2) - 0.5)), height - 1)
        if c0 > c1 or r0 > r1:
            continue
        px = np.arange(c0, c1 + 1) + 0.5
        py = (np.arange(r0, r1 + 1) + 0.5)[:, None]
        s = 1.0 if area > 0 else -1.0
        e0 = s * ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0))
        e1 = s * ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1))
        e2 = s * ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2))
        inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        image[r0:r1 + 1, c0:c1 + 1] |= inside.astype(np.uint8)
    return image


def softmin_rows(C, pot, eps):
    """Row-wise ``-eps * log(sum_j exp((pot_j - C_ij) / eps))``."""
    x = (pot[None, :] - C) / eps
    mx = x.max(axis=1, keepdims=True)
    return -eps * (mx[:, 0] + np.log(np.exp(x - mx).sum(axis=1)))
