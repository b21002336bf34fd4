import math

import numpy as np
import pytest

from gmshape.mixture import GaussianMixture3, expected_density, random_mixture
from gmshape.surface import (TriangleMesh, VoxelGrid, default_bounds, extract_mesh, iso_threshold, load_grid,
                             marching_cubes, sample_surface, save_grid, voxelize_density, write_obj, write_ply)


def isotropic(sigma, mean=(0.0, 0.0, 0.0)):
    return GaussianMixture3.from_covariances([1.0], [mean], [sigma**2 * np.eye(3)])


def test_threshold_unit():
    assert iso_threshold(isotropic(1.0), 1.0) == pytest.approx((4 * math.pi) ** -1.5, rel=1e-14)


def test_threshold_linear_in_c(rng):
    m = random_mixture(3, rng)
    assert iso_threshold(m, 2.0) == pytest.approx(2.0 * iso_threshold(m, 1.0), rel=1e-15)
    with pytest.raises(ValueError):
        iso_threshold(m, 0.0)


def test_single_gaussian_iso_radius():
    # phi(r) = E[f]  <=>  exp(-r^2 / 2 s^2) = 2^(-3/2)  <=>  r = s sqrt(3 ln 2)
    s = 0.2
    r = s * math.sqrt(3 * math.log(2))
    m = isotropic(s)
    from gmshape.mixture import density

    assert density(m, [r, 0, 0]) == pytest.approx(iso_threshold(m, 1.0), rel=1e-12)
    assert r / s == pytest.approx(1.4420, abs=1e-4)


def test_grid_layout():
    g = VoxelGrid.from_bounds((4, 3, 2), (np.zeros(3), np.array([4.0, 3.0, 2.0])))
    assert g.spacing == 1.0
    c = g.centers()
    assert c.shape == (2, 3, 4, 3)
    np.testing.assert_allclose(c[1, 2, 3], [3.5, 2.5, 1.5])
    # x-fastest flattening
    np.testing.assert_allclose(c.reshape(-1, 3)[1], [1.5, 0.5, 0.5])


def test_grid_validation():
    with pytest.raises(ValueError):
        VoxelGrid((2, 2, 2), np.zeros(3), 0.0, np.zeros(8))
    with pytest.raises(ValueError):
        VoxelGrid((2, 2, 2), np.zeros(3), 1.0, np.zeros(7))


def test_far_field_is_tiny():
    s = 0.1
    g = voxelize_density(isotropic(s), 8, (-np.full(3, 1.2), np.full(3, 1.2)))
    corner = g.values[0, 0, 0]
    assert np.linalg.norm(g.centers()[0, 0, 0]) > 10 * s
    assert corner < 1e-20


def test_quadrature_mass(rng):
    m = random_mixture(3, rng, spread=0.5, scale=(0.15, 0.3))
    sd = np.sqrt(np.linalg.eigvalsh(m.covariances).max())
    lo = (m.means - 6 * sd).min(0)
    hi = (m.means + 6 * sd).max(0)
    g = voxelize_density(m, 80, (lo, hi))
    assert g.values.sum() * g.spacing**3 == pytest.approx(1.0, abs=1e-3)


def test_mirror_symmetry():
    m = GaussianMixture3.from_covariances([0.5, 0.5], [[0.3, 0, 0], [-0.3, 0, 0]], [0.02 * np.eye(3)] * 2)
    g = voxelize_density(m, 20, (-np.ones(3), np.ones(3)))
    np.testing.assert_allclose(g.values, g.values[:, :, ::-1], rtol=1e-13)


def test_default_bounds_cover_mass(rng):
    m = random_mixture(4, rng)
    lo, hi = default_bounds(m)
    g = voxelize_density(m, 64, (lo, hi))
    assert g.values.sum() * g.spacing**3 > 0.99


# marching cubes ------------------------------------------------------------------

def test_linear_sphere_field():
    g = VoxelGrid.from_bounds(40, (-np.ones(3), np.ones(3)))
    vals = -np.linalg.norm(g.centers(), axis=-1)
    mesh = marching_cubes(VoxelGrid(g.dims, g.origin, g.spacing, vals), -0.6)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.all(np.abs(r - 0.6) <= g.spacing)
    assert mesh.boundary_edge_count() == 0
    # normals point towards lower values, i.e. outwards
    assert mesh.volume() > 0


def test_no_crossing_is_empty():
    g = VoxelGrid.from_bounds(5, (-np.ones(3), np.ones(3)))
    mesh = marching_cubes(VoxelGrid(g.dims, g.origin, g.spacing, np.zeros(125)), 1.0)
    assert mesh.is_empty
    assert mesh.volume() == 0.0


def test_marching_cubes_needs_two_samples():
    g = VoxelGrid((1, 4, 4), np.zeros(3), 1.0, np.zeros(16))
    with pytest.raises(ValueError):
        marching_cubes(g, 0.5)


def test_single_gaussian_mesh():
    s = 0.2
    r = s * math.sqrt(3 * math.log(2))
    mesh = extract_mesh(isotropic(s), 1.0, 96, (-np.ones(3), np.ones(3)))
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.all(np.abs(radii / 0.2885 - 1) < 0.02)
    assert mesh.volume() == pytest.approx(4 / 3 * math.pi * r**3, rel=0.05)
    assert mesh.boundary_edge_count() == 0
    assert np.all(mesh.areas() > 1e-12)


def test_translation_invariance():
    m = isotropic(0.2)
    t = np.array([0.25, -0.5, 0.125])
    bounds = (-np.ones(3), np.ones(3))
    a = extract_mesh(m, 1.0, 24, bounds)
    b = extract_mesh(m.transformed(np.eye(3), t), 1.0, 24, (bounds[0] + t, bounds[1] + t))
    assert len(a.triangles) == len(b.triangles)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_allclose(b.vertices - t, a.vertices, atol=1e-12)


def test_sample_surface_on_sphere():
    mesh = extract_mesh(isotropic(0.2), 1.0, 48, (-np.ones(3), np.ones(3)))
    pts = sample_surface(mesh, 500, seed=0)
    assert np.all(np.abs(np.linalg.norm(pts, axis=1) - 0.2885) < 0.02)
    np.testing.assert_array_equal(pts, sample_surface(mesh, 500, seed=0))


def test_mesh_validation():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_grid_file_round_trip(tmp_path, rng):
    g = VoxelGrid((3, 4, 5), [0.5, -1.0, 2.0], 0.25, rng.random(60))
    save_grid(g, tmp_path / "g.vox")
    raw = (tmp_path / "g.vox").read_bytes()
    assert len(raw) == 16 + 12 + 4 * 60
    back = load_grid(tmp_path / "g.vox")
    assert back.dims == (3, 4, 5)
    np.testing.assert_allclose(back.values, g.values, rtol=1e-7)
    np.testing.assert_allclose(back.origin, g.origin)


def test_grid_file_truncated(tmp_path):
    (tmp_path / "bad.vox").write_bytes(b"\x01\x00")
    with pytest.raises(ValueError):
        load_grid(tmp_path / "bad.vox")


def test_mesh_writers(tmp_path):
    mesh = extract_mesh(isotropic(0.2), 1.0, 16, (-np.ones(3), np.ones(3)))
    write_obj(mesh, tmp_path / "m.obj")
    write_ply(mesh, tmp_path / "m.ply")
    text = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(line.startswith("v ") for line in text) == len(mesh.vertices)
    assert sum(line.startswith("f ") for line in text) == len(mesh.triangles)
    assert (tmp_path / "m.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")
