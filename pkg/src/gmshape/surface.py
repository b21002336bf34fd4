"""Isosurface extraction from a Gaussian mixture.

The surface is the level set of the density at ``tau = c * E[f]``, where
``E[f]`` (the integral of f squared) stands in for the inverse object volume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure

from .mixture import GaussianMixture3, expected_density, log_density, mixture_moments


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Regular grid of scalars.

    ``origin`` is the minimum corner; voxel (i, j, k) is centered at
    ``origin + (i + 0.5, j + 0.5, k + 0.5) * spacing``. ``values`` has shape
    ``(nz, ny, nx)`` so that its C-order flattening is x-fastest.
    """

    dims: tuple
    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError("dims must be three positive integers")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        values = np.asarray(self.values)
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"values has {values.size} entries, expected {np.prod(dims)}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", values.reshape(dims[2], dims[1], dims[0]))

    @classmethod
    def from_bounds(cls, dims, bounds, values=None):
        """Grid with ``dims`` voxels covering ``bounds = (lo, hi)`` with cubic voxels.

        The spacing is the largest per-axis extent / count; the grid is centered
        on the bounds.
        """
        dims = tuple(int(d) for d in np.broadcast_to(dims, 3))
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        if np.any(hi <= lo):
            raise ValueError("bounds must satisfy lo < hi on every axis")
        spacing = float(np.max((hi - lo) / np.array(dims)))
        origin = 0.5 * (lo + hi) - 0.5 * spacing * np.array(dims)
        if values is None:
            values = np.zeros(dims[::-1])
        return cls(dims, origin, spacing, values)

    def centers(self):
        """Voxel centers, shape (nz, ny, nx, 3) in (x, y, z) coordinates."""
        nx, ny, nz = self.dims
        h = self.spacing
        z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return np.stack([x, y, z], axis=-1) * h + self.origin + 0.5 * h

    def axis_centers(self, axis):
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing

    @property
    def bounds(self):
        return self.origin, self.origin + self.spacing * np.array(self.dims)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def areas(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def volume(self):
        """Signed enclosed volume (positive for outward-oriented closed meshes)."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def boundary_edge_count(self):
        """Number of undirected edges not shared by exactly two triangles."""
        if self.is_empty:
            return 0
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.sum(counts != 2))

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def iso_threshold(m: GaussianMixture3, c: float = 1.0) -> float:
    if c <= 0:
        raise ValueError("c must be positive")
    return c * expected_density(m)


def default_bounds(m: GaussianMixture3, n_std=4.0, pad=0.1):
    mean, cov = mixture_moments(m)
    half = n_std * np.sqrt(np.diag(cov)) * (1.0 + pad)
    return mean - half, mean + half


def voxelize_density(m: GaussianMixture3, dims, bounds=None) -> VoxelGrid:
    """Mixture density sampled at voxel centers."""
    if bounds is None:
        bounds = default_bounds(m)
    grid = VoxelGrid.from_bounds(dims, bounds)
    pts = grid.centers().reshape(-1, 3)
    vals = np.exp(log_density(m, pts))
    return VoxelGrid(grid.dims, grid.origin, grid.spacing, vals)


def marching_cubes(grid: VoxelGrid, tau: float) -> TriangleMesh:
    """Triangulated level set ``value == tau`` with normals pointing to lower values."""
    if min(grid.dims) < 2:
        raise ValueError("marching cubes needs at least 2 samples per axis")
    vol = np.ascontiguousarray(grid.values.transpose(2, 1, 0), dtype=np.float64)
    if not (vol.min() < tau < vol.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    h = grid.spacing
    verts, faces, _, _ = measure.marching_cubes(
        vol, level=tau, spacing=(h, h, h), gradient_direction="descent",
        allow_degenerate=False, method="lewiner")
    verts = verts.astype(np.float64) + grid.origin + 0.5 * h
    # skimage winds faces clockwise seen from the low-value side; reverse for outward normals
    faces = np.ascontiguousarray(faces[:, ::-1])
    mesh = TriangleMesh(verts, faces)
    keep = mesh.areas() > 1e-12
    if not np.all(keep):
        mesh = TriangleMesh(verts, faces[keep])
    return mesh


def extract_mesh(m: GaussianMixture3, c: float = 1.0, dims=128, bounds=None) -> TriangleMesh:
    return marching_cubes(voxelize_density(m, dims, bounds), iso_threshold(m, c))


def sample_surface(mesh: TriangleMesh, n: int, seed: int):
    """n points uniformly distributed over the mesh area."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


# Mesh files ---------------------------------------------------------------------

def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def write_ply(mesh: TriangleMesh, path) -> None:
    """Binary little-endian PLY (float64 vertices, int32 indices)."""
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    faces = np.empty(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    Path(path).write_bytes(header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes())


# Voxel grid files ---------------------------------------------------------------

_GRID_HEADER = struct.Struct("<3If")


def save_grid(grid: VoxelGrid, path) -> None:
    """16-byte header (3 x u32 dims, f32 spacing), f32 origin[3], f32 values (x-fastest)."""
    data = _GRID_HEADER.pack(*grid.dims, grid.spacing)
    data += np.asarray(grid.origin, dtype="<f4").tobytes()
    data += np.asarray(grid.values, dtype="<f4").tobytes()
    Path(path).write_bytes(data)


def load_grid(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < 28:
        raise ValueError(f"{path}: file too short for a voxel grid header")
    nx, ny, nz, spacing = _GRID_HEADER.unpack_from(raw, 0)
    origin = np.frombuffer(raw, dtype="<f4", count=3, offset=16).astype(np.float64)
    n = nx * ny * nz
    if len(raw) != 28 + 4 * n:
        raise ValueError(f"{path}: expected {28 + 4 * n} bytes for dims {(nx, ny, nz)}, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", count=n, offset=28).astype(np.float64)
    return VoxelGrid((nx, ny, nz), origin, float(spacing), values)
