"""Per-shape optimisation of mixture parameters.

``fit`` runs Adam on the raw parameters against :func:`~gmshape.losses.total_loss`.
``em_fit`` is plain expectation-maximisation on the same log-likelihood and
serves both as an initializer and as an independent check on ``fit``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .losses import LossConfig, total_loss
from .mixture import GaussianMixture3, MixtureParams, constrain, log_density, unconstrain

log = logging.getLogger(__name__)

INIT_METHODS = ("random-sphere", "em-warmstart")
COV_FLOOR = 1e-6


class FitDivergedError(RuntimeError):
    def __init__(self, iteration, term):
        super().__init__(f"non-finite {term} at iteration {iteration}")
        self.iteration = iteration
        self.term = term


@dataclass(frozen=True)
class FitConfig:
    k: int = 16
    iters: int = 500
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    init: str = "random-sphere"
    # radius of the ball the initial means are drawn from, and initial std-dev
    init_radius: float = 0.5
    init_scale: float = 0.1
    cosine_decay: bool = True
    em_iters: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.k < 1 or self.iters < 1 or self.lr <= 0:
            raise ValueError("need k >= 1, iters >= 1 and lr > 0")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")


@dataclass
class FitTrace:
    l_3d: list = field(default_factory=list)
    l_dist: list = field(default_factory=list)
    l_sil: list = field(default_factory=list)
    total: list = field(default_factory=list)
    wall_clock: float = 0.0
    initial_full: float | None = None
    final_full: float | None = None
    final_params: MixtureParams | None = None

    def __len__(self):
        return len(self.total)

    def rows(self):
        for i, vals in enumerate(zip(self.l_3d, self.l_dist, self.l_sil, self.total)):
            yield (i, *vals)

    def to_csv(self) -> str:
        lines = ["iter,l_3d,l_dist,l_sil,total"]
        for i, a, b, c, d in self.rows():
            lines.append(f"{i},{a:.17g},{b:.17g},{c:.17g},{d:.17g}")
        return "\n".join(lines) + "\n"


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, grad, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return x - lr * mhat / (np.sqrt(vhat) + self.eps)


def random_sphere_init(k, seed, radius=0.5, scale=0.1, center=None) -> GaussianMixture3:
    """Equal weights, means uniform in a ball, isotropic components of std ``scale``."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((k, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(k) ** (1.0 / 3.0)
    means = d * r[:, None]
    if center is not None:
        means = means + center
    L = np.broadcast_to(np.eye(3) / scale, (k, 3, 3))
    return GaussianMixture3(np.full(k, 1.0 / k), means, L)


def _cosine_lr(lr, it, iters):
    return 0.5 * lr * (1.0 + math.cos(math.pi * it / iters))


def fit(target_points, views, cfg: FitConfig, loss_cfg: LossConfig, init: GaussianMixture3 | None = None):
    """Fit a K-component mixture to a volume point cloud (plus optional silhouettes).

    Each iteration draws ``loss_cfg.sample_batch`` points and ``loss_cfg.n_views``
    views at random, evaluates :func:`total_loss` and takes one Adam step.
    Returns ``(mixture, trace)``.
    """
    points = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("target_points must be non-empty")
    views = list(views or [])
    if loss_cfg.w_sil > 0 and not views:
        raise ValueError("silhouette weight is positive but no views were given")
    use_views = views if loss_cfg.w_sil > 0 else []

    rng = np.random.default_rng(cfg.seed)
    if init is None:
        if cfg.init == "em-warmstart":
            init = em_fit(points, cfg.k, cfg.em_iters, cfg.seed)
        else:
            init = random_sphere_init(cfg.k, cfg.seed, cfg.init_radius, cfg.init_scale)
    if init.k != cfg.k:
        raise ValueError(f"initial mixture has {init.k} components, config asks for {cfg.k}")
    params = unconstrain(init)
    x = params.flat()
    opt = Adam(x.size, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = FitTrace()
    trace.initial_full = total_loss(params, points, use_views, loss_cfg, cfg.threads).total

    batch = loss_cfg.sample_batch
    n_views = min(loss_cfg.n_views, len(use_views))
    start = time.perf_counter()
    for it in range(cfg.iters):
        if batch and batch < len(points):
            pts = points[rng.integers(0, len(points), batch)]
        else:
            pts = points
        if use_views:
            sel = rng.choice(len(use_views), size=n_views, replace=False)
            vs = [use_views[i] for i in sel]
        else:
            vs = []
        report = total_loss(MixtureParams.from_flat(x), pts, vs, loss_cfg, cfg.threads)
        for term in ("l_3d", "l_dist", "l_sil", "total"):
            if not math.isfinite(getattr(report, term)):
                raise FitDivergedError(it, term)
        if not np.all(np.isfinite(report.gradient)):
            raise FitDivergedError(it, "gradient")
        trace.l_3d.append(report.l_3d)
        trace.l_dist.append(report.l_dist)
        trace.l_sil.append(report.l_sil)
        trace.total.append(report.total)
        lr = _cosine_lr(cfg.lr, it, cfg.iters) if cfg.cosine_decay else cfg.lr
        x = opt.step(x, report.gradient.ravel(), lr)
        if it % 100 == 0:
            log.debug("iter %d total %.6g (3d %.6g dist %.3g sil %.6g)", it, report.total,
                      report.l_3d, report.l_dist, report.l_sil)
    trace.wall_clock = time.perf_counter() - start
    final = MixtureParams.from_flat(x)
    trace.final_params = final
    trace.final_full = total_loss(final, points, use_views, loss_cfg, cfg.threads).total
    return constrain(final), trace


# EM ---------------------------------------------------------------------------

def _kmeanspp(points, k, rng):
    centers = [points[rng.integers(len(points))]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(len(points)) if total <= 0 else rng.choice(len(points), p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def _floor_cov(cov):
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, COV_FLOOR)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _m_step(points, resp, rng):
    n, k = resp.shape
    nk = resp.sum(axis=0)
    global_cov = np.cov(points.T, bias=True)
    means = np.empty((k, 3))
    covs = np.empty((k, 3, 3))
    for j in range(k):
        if nk[j] < 1e-10 * n:
            # empty cluster: re-seed from a random point
            means[j] = points[rng.integers(n)]
            covs[j] = global_cov / max(k, 1) ** (2.0 / 3.0)
            nk[j] = 1.0
            continue
        means[j] = resp[:, j] @ points / nk[j]
        diff = points - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
    weights = nk / nk.sum()
    return GaussianMixture3.from_covariances(weights, means, _floor_cov(covs))


def _e_step(points, m: GaussianMixture3):
    L = m.precision_chol
    delta = points[:, None, :] - m.means[None]
    y = np.einsum("nki,kij->nkj", delta, L)
    with np.errstate(divide="ignore"):
        lp = (np.log(m.weights) + np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
              - 1.5 * math.log(2.0 * math.pi) - 0.5 * np.einsum("nkj,nkj->nk", y, y))
    lse = logsumexp(lp, axis=1)
    return np.exp(lp - lse[:, None]), float(lse.mean())


def em_iterations(points, init: GaussianMixture3, iters: int, seed: int = 0):
    """Run ``iters`` EM steps from ``init``.

    Returns ``(mixture, loglik)`` where ``loglik[i]`` is the average
    log-likelihood of the mixture before step i, plus the final value.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    m = init
    history = []
    for _ in range(iters):
        resp, ll = _e_step(points, m)
        history.append(ll)
        m = _m_step(points, resp, rng)
    history.append(float(log_density(m, points).mean()))
    return m, history


def em_init(points, k, seed) -> GaussianMixture3:
    """k-means++ seeds followed by one hard-assignment moment step."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < k:
        raise ValueError(f"need at least k={k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(points, k, rng)
    d2 = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((len(points), k))
    resp[np.arange(len(points)), d2.argmin(axis=1)] = 1.0
    return _m_step(points, resp, rng)


def em_fit(target_points, k: int, iters: int, seed: int, init: GaussianMixture3 | None = None) -> GaussianMixture3:
    """Maximum-likelihood mixture by EM (full covariances, floored at 1e-6)."""
    points = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(points) < k:
        raise ValueError(f"need at least k={k} points, got {len(points)}")
    if init is None:
        if k == 1:
            resp = np.ones((len(points), 1))
            init = _m_step(points, resp, np.random.default_rng(seed))
            iters = max(iters - 1, 0)
        else:
            init = em_init(points, k, seed)
    m, _ = em_iterations(points, init, iters, seed)
    return m
