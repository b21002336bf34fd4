import numpy as np
import pytest

from gmshape.camera import SilhouetteImage
from gmshape.metrics import (EvalReport, chamfer, chamfer_brute, emd, emd_exact, emd_sinkhorn, iou,
                             iou_volumes, normalize_unit_cube, occupancy, silhouette_mse)
from gmshape.mixture import GaussianMixture3
from gmshape.surface import VoxelGrid


def blob(center=(0.0, 0.0, 0.0), s=0.2):
    return GaussianMixture3.from_covariances([1.0], [center], [s**2 * np.eye(3)])


def grid16():
    return VoxelGrid.from_bounds(16, (-np.ones(3), np.ones(3)))


def with_values(g, vals):
    return VoxelGrid(g.dims, g.origin, g.spacing, np.asarray(vals, dtype=np.float64))


# IoU ---------------------------------------------------------------------------

def test_iou_exact_match():
    g = grid16()
    m = blob()
    gt = with_values(g, occupancy(m, g))
    assert iou(m, gt) == 1.0


def test_iou_disjoint():
    g = grid16()
    vals = np.zeros(g.values.shape)
    vals[0, 0, 0] = 1.0  # a corner voxel far from the blob
    assert iou(blob(), with_values(g, vals)) == 0.0


def test_iou_half_overlapping_cubes():
    a = np.zeros((4, 4, 4), bool)
    b = np.zeros((4, 4, 4), bool)
    a[:, :, 0:2] = True
    b[:, :, 1:3] = True
    assert iou_volumes(a, b) == pytest.approx(1 / 3)
    assert iou_volumes(b, a) == iou_volumes(a, b)


def test_iou_errors():
    g = grid16()
    with pytest.raises(ValueError):
        iou(blob(), with_values(g, np.zeros(g.values.shape)))
    with pytest.raises(ValueError):
        iou(blob(), with_values(g, np.full(g.values.shape, 0.5)))


def test_iou_threshold_monotone():
    # a lower threshold grows the predicted volume
    g = grid16()
    assert occupancy(blob(), g, 0.3).sum() > occupancy(blob(), g, 1.0).sum()


# Chamfer -------------------------------------------------------------------------

def test_chamfer_identical_and_single_points():
    p = np.random.default_rng(0).random((50, 3))
    assert chamfer(p, p) == 0.0
    d = 0.37
    assert chamfer([[0, 0, 0]], [[d, 0, 0]], normalize="none") == pytest.approx(2 * d)


def test_chamfer_matches_brute_force(rng):
    a = rng.normal(size=(512, 3))
    b = rng.normal(size=(512, 3)) * [1, 2, 0.5]
    for mode in ("per-cloud", "joint", "none"):
        assert abs(chamfer(a, b, mode) - chamfer_brute(a, b, mode)) <= 1e-12


def test_chamfer_symmetric_and_translation_invariant(rng):
    a = rng.random((100, 3))
    b = rng.random((80, 3))
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-14)
    t = np.array([3.0, -2.0, 0.5])
    assert chamfer(a + t, b + t, "joint") == pytest.approx(chamfer(a, b, "joint"), abs=1e-12)


def test_unit_cube_normalization(rng):
    p = normalize_unit_cube(rng.normal(size=(40, 3)) * 5 + 2)
    assert np.max(p.max(0) - p.min(0)) == pytest.approx(1.0)
    np.testing.assert_allclose(p.max(0) + p.min(0), 0, atol=1e-12)


def test_bad_normalization():
    with pytest.raises(ValueError):
        chamfer([[0, 0, 0]], [[1, 0, 0]], normalize="other")
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), [[1, 0, 0]])


# EMD ------------------------------------------------------------------------------

def test_emd_identical_and_relabeled(rng):
    p = rng.random((30, 3))
    assert emd(p, p).value == 0.0
    q = p[rng.permutation(30)]
    assert emd(p, q).value == pytest.approx(0.0, abs=1e-15)


def test_emd_two_points_by_hand():
    a = [[0, 0, 0], [1, 0, 0]]
    b = [[1, 0.5, 0], [0, 0.5, 0]]
    assert emd(a, b, normalize="none").value == pytest.approx(0.5)


def test_emd_size_mismatch():
    with pytest.raises(ValueError):
        emd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_emd_auto_method(rng):
    assert emd(rng.random((10, 3)), rng.random((10, 3))).method == "exact"
    r = emd(rng.random((300, 3)), rng.random((300, 3)))
    assert r.method == "sinkhorn"
    assert r.gap >= 0


def test_sinkhorn_bounds_bracket_exact(rng):
    for n in (64, 200):
        a = rng.random((n, 3))
        b = rng.random((n, 3))
        C = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
        exact = emd_exact(C)
        upper, lower = emd_sinkhorn(C)
        assert lower <= exact + 1e-12
        assert upper >= exact - 1e-12
        assert upper <= 1.02 * exact


def test_emd_symmetric(rng):
    a, b = rng.random((40, 3)), rng.random((40, 3))
    assert emd(a, b).value == pytest.approx(emd(b, a).value, rel=1e-12)


# silhouettes and reports ------------------------------------------------------------

def test_silhouette_mse():
    ones = SilhouetteImage(np.ones((4, 5)))
    zeros = SilhouetteImage(np.zeros((4, 5)))
    half = SilhouetteImage(np.full((4, 5), 0.5))
    assert silhouette_mse(ones, ones) == 0.0
    assert silhouette_mse(ones, zeros) == 1.0
    assert silhouette_mse(half, zeros) == silhouette_mse(zeros, half) == 0.25
    with pytest.raises(ValueError):
        silhouette_mse(ones, SilhouetteImage(np.ones((5, 4))))


def test_report_csv():
    r = EvalReport(0.5, 0.25, 0.125, float("nan"), {"iou_dims": 32})
    assert r.csv_header() == "iou,cd,emd,sil_mse"
    assert r.csv_row() == "0.5,0.25,0.125,nan"
    assert r.to_dict()["config"] == {"iou_dims": 32}
