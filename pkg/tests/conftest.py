import numpy as np
import pytest

from gmshape.mixture import MixtureParams, random_mixture, unconstrain

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(k, rng, spread=0.5, scale=(0.1, 0.4)) -> MixtureParams:
    """Raw parameters of a random mixture, with non-zero weight logits."""
    p = unconstrain(random_mixture(k, rng, spread, scale))
    raw = p.raw.copy()
    raw[:, 0] += rng.normal(0.0, 0.3, k)
    return MixtureParams(raw)


def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest |a - n| / |a| over entries where |a| > floor."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    mask = np.abs(a) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - n[mask]) / np.abs(a[mask])))
