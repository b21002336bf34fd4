"""Target preparation: mesh and point-cloud loading, solid voxelization,
volume sampling and ground-truth silhouette sets."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import (DEFAULT_FOV_DEG, DEFAULT_SIZE, Camera, SilhouetteImage, icosphere,
                     icosphere_viewpoints, load_cameras, rasterize_mesh_silhouette, read_pgm,
                     save_cameras, write_pgm)
from .surface import TriangleMesh, VoxelGrid, load_grid

# Rays are nudged off the voxel-center lattice by this fraction of the spacing
# so they never pass exactly through a mesh edge or vertex.
_RAY_NUDGE = (1.1e-7 * np.sqrt(2.0), 1.3e-7 * np.sqrt(3.0))


class MeshFormatError(ValueError):
    pass


# Mesh files --------------------------------------------------------------------

def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or PLY file; polygons are fan-triangulated."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        return _load_ply(path)
    raise MeshFormatError(f"{path}: unsupported mesh extension {ext!r} (expected .obj or .ply)")


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _load_obj(path) -> TriangleMesh:
    verts, tris = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                try:
                    xyz = [float(p) for p in parts[1:4]]
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinates") from None
                if len(xyz) != 3:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append(xyz)
            elif parts[0] == "f":
                poly = []
                for tok in parts[1:]:
                    try:
                        idx = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {tok!r}") from None
                    idx = idx - 1 if idx > 0 else len(verts) + idx
                    if not 0 <= idx < len(verts):
                        raise MeshFormatError(f"{path}:{lineno}: face index {tok!r} out of range")
                    poly.append(idx)
                if len(poly) < 3:
                    raise MeshFormatError(f"{path}:{lineno}: face needs at least 3 vertices")
                tris.extend(_fan(poly))
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _load_ply(path) -> TriangleMesh:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: missing PLY magic or end_header")
    body_start = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # [name, count, [(prop, type) or (prop, ('list', count_t, item_t))]]
    for lineno, line in enumerate(header, 1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise MeshFormatError(f"{path}: header line {lineno}: unknown keyword {parts[0]!r}")
        except (IndexError, KeyError, ValueError):
            raise MeshFormatError(f"{path}: header line {lineno}: malformed {line.strip()!r}") from None
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")

    verts = np.zeros((0, 3))
    tris = []
    if fmt == "ascii":
        tokens = raw[body_start:].decode("ascii", errors="replace").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for r in range(count):
                row = {}
                for prop, typ in props:
                    try:
                        if isinstance(typ, tuple):
                            n = int(tokens[pos])
                            row[prop] = [int(float(t)) for t in tokens[pos + 1:pos + 1 + n]]
                            pos += 1 + n
                        else:
                            row[prop] = float(tokens[pos])
                            pos += 1
                    except (IndexError, ValueError):
                        raise MeshFormatError(f"{path}: element {name!r} row {r}: truncated or malformed") from None
                rows.append(row)
            if name == "vertex":
                verts = np.array([[row["x"], row["y"], row["z"]] for row in rows]).reshape(-1, 3)
            elif name == "face":
                key = props[0][0]
                for row in rows:
                    tris.extend(_fan(row[key]))
    else:
        bo = "<" if fmt == "binary_little_endian" else ">"
        pos = body_start
        for name, count, props in elements:
            if all(not isinstance(t, tuple) for _, t in props):
                dt = np.dtype([(p, bo + t) for p, t in props])
                if pos + dt.itemsize * count > len(raw):
                    raise MeshFormatError(f"{path}: element {name!r} truncated at byte offset {pos}")
                arr = np.frombuffer(raw, dtype=dt, count=count, offset=pos)
                pos += dt.itemsize * count
                if name == "vertex":
                    verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                continue
            for r in range(count):
                row = {}
                for prop, typ in props:
                    try:
                        if isinstance(typ, tuple):
                            ct, it = np.dtype(bo + typ[1]), np.dtype(bo + typ[2])
                            n = int(np.frombuffer(raw, dtype=ct, count=1, offset=pos)[0])
                            pos += ct.itemsize
                            row[prop] = np.frombuffer(raw, dtype=it, count=n, offset=pos).astype(np.int64).tolist()
                            pos += it.itemsize * n
                        else:
                            dt = np.dtype(bo + typ)
                            row[prop] = float(np.frombuffer(raw, dtype=dt, count=1, offset=pos)[0])
                            pos += dt.itemsize
                    except ValueError:
                        raise MeshFormatError(f"{path}: element {name!r} row {r} truncated at byte offset {pos}") from None
                if name == "face":
                    tris.extend(_fan(row[props[0][0]]))
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshFormatError(f"{path}: face index out of range")
    return TriangleMesh(verts, tris)


# Simple solids --------------------------------------------------------------------

def box_mesh(lo, hi) -> TriangleMesh:
    """Axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (i >> a) & 1 else lo)[a] for a in range(3)] for i in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = [t for q in quads for t in _fan(q)]
    return TriangleMesh(corners, np.array(tris))


def sphere_mesh(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    verts, faces = icosphere(subdivisions)
    mesh = TriangleMesh(radius * verts + np.asarray(center, dtype=np.float64), faces)
    if mesh.volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def merge_meshes(meshes) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def table_mesh(top=(1.0, 0.08, 0.6), leg_width=0.06, leg_height=0.5) -> TriangleMesh:
    """Box table top on four thin legs, y up, centered on the origin.

    The parts touch but are separate closed boxes, so parity voxelization
    still sees a closed solid.
    """
    tx, ty, tz = top
    h = leg_height + ty
    y0 = -0.5 * h
    parts = [box_mesh((-tx / 2, y0 + leg_height, -tz / 2), (tx / 2, y0 + h, tz / 2))]
    inset = leg_width
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (tx / 2 - inset)
            cz = sz * (tz / 2 - inset)
            parts.append(box_mesh((cx - leg_width / 2, y0, cz - leg_width / 2),
                                  (cx + leg_width / 2, y0 + leg_height, cz + leg_width / 2)))
    return merge_meshes(parts)


# Normalization ----------------------------------------------------------------------

def bbox_diagonal(points) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def normalize_mesh(mesh: TriangleMesh):
    """Center the bounding box on the origin and scale its diagonal to 1.

    Returns ``(mesh, center, scale)`` with ``new = (old - center) * scale``.
    """
    if len(mesh.vertices) == 0:
        raise ValueError("cannot normalize an empty mesh")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag == 0.0:
        raise ValueError("mesh bounding box is a single point")
    center = 0.5 * (lo + hi)
    return TriangleMesh((mesh.vertices - center) / diag, mesh.triangles), center, 1.0 / diag


# Voxelization -----------------------------------------------------------------------

def _axis_parity(mesh: TriangleMesh, grid: VoxelGrid, axis: int):
    """Inside test by ray parity along ``axis``.

    Returns a boolean array shaped like ``grid.values`` and the number of
    rays that crossed the surface an odd number of times.
    """
    a1, a2 = [i for i in range(3) if i != axis]
    h = grid.spacing
    along = grid.axis_centers(axis)
    c1 = grid.axis_centers(a1) + _RAY_NUDGE[0] * h
    c2 = grid.axis_centers(a2) + _RAY_NUDGE[1] * h
    n_along, n1, n2 = len(along), len(c1), len(c2)
    toggles = np.zeros((n_along + 1, n1, n2), dtype=np.int64)
    tri = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    P = tri[:, :, [a1, a2]]
    S = tri[:, :, axis]
    origin1, origin2 = c1[0], c2[0]
    for (p0, p1, p2), (s0, s1, s2) in zip(P, S):
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if area == 0.0:
            continue
        lo = np.minimum(np.minimum(p0, p1), p2)
        hi = np.maximum(np.maximum(p0, p1), p2)
        i0 = max(int(np.ceil((lo[0] - origin1) / h)), 0)
        i1 = min(int(np.floor((hi[0] - origin1) / h)), n1 - 1)
        j0 = max(int(np.ceil((lo[1] - origin2) / h)), 0)
        j1 = min(int(np.floor((hi[1] - origin2) / h)), n2 - 1)
        if i0 > i1 or j0 > j1:
            continue
        u = c1[i0:i1 + 1, None]
        v = c2[None, j0:j1 + 1]
        # barycentric weights of the ray's (u, v) in the projected triangle
        w1 = ((u - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (v - p0[1])) / area
        w2 = ((p1[0] - p0[0]) * (v - p0[1]) - (u - p0[0]) * (p1[1] - p0[1])) / area
        w0 = 1.0 - w1 - w2
        hit = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not hit.any():
            continue
        ii, jj = np.nonzero(hit)
        s = w0[ii, jj] * s0 + w1[ii, jj] * s1 + w2[ii, jj] * s2
        k = np.searchsorted(along, s)
        np.add.at(toggles, (k, ii + i0, jj + j0), 1)
    odd_rays = int(np.count_nonzero(toggles.sum(axis=0) % 2))
    inside = (np.cumsum(toggles, axis=0)[:-1] % 2).astype(bool)  # (along, a1, a2)
    # reorder to (z, y, x)
    order = {axis: 0, a1: 1, a2: 2}
    inside = np.transpose(inside, [order[2], order[1], order[0]])
    return inside, odd_rays


def voxelize_solid(mesh: TriangleMesh, dims, bounds=None, return_flag=False):
    """Binary occupancy of voxel centers by ray parity, majority vote over x, y, z.

    If ``bounds`` is omitted the mesh bounding box (padded by one voxel) is used.
    With ``return_flag`` the result is ``(grid, watertight)`` where
    ``watertight`` is False when some ray crossed the surface an odd number
    of times.
    """
    if bounds is None:
        if mesh.is_empty:
            bounds = (-0.5 * np.ones(3), 0.5 * np.ones(3))
        else:
            lo, hi = mesh.bbox()
            n = np.broadcast_to(dims, 3)
            span = float(np.max(hi - lo))
            pad = span / (np.max(n) - 2) if np.max(n) > 2 else span
            lo, hi = lo - pad, hi + pad
            bounds = (np.minimum(lo, hi - 1e-9), np.maximum(hi, lo + 1e-9))
    grid = VoxelGrid.from_bounds(dims, bounds)
    if mesh.is_empty:
        out = VoxelGrid(grid.dims, grid.origin, grid.spacing, np.zeros(grid.values.shape))
        return (out, True) if return_flag else out
    votes = np.zeros(grid.values.shape, dtype=np.int64)
    odd = 0
    for axis in range(3):
        inside, n_odd = _axis_parity(mesh, grid, axis)
        votes += inside
        odd += n_odd
    out = VoxelGrid(grid.dims, grid.origin, grid.spacing, (votes >= 2).astype(np.float64))
    return (out, odd == 0) if return_flag else out


def sample_volume_points(grid: VoxelGrid, n: int, seed: int):
    """Occupied voxel centers drawn uniformly with replacement, jittered within the voxel."""
    occ = np.argwhere(grid.values > 0.5)  # (m, 3) as (z, y, x)
    if len(occ) == 0:
        raise ValueError("grid has no occupied voxels")
    rng = np.random.default_rng(seed)
    pick = occ[rng.integers(len(occ), size=n)][:, ::-1]
    jitter = rng.random((n, 3)) - 0.5
    return grid.origin + (pick + 0.5 + jitter) * grid.spacing


# Targets --------------------------------------------------------------------------

@dataclass
class ShapeTarget:
    points: np.ndarray
    grid: VoxelGrid
    bbox_diag: float
    provenance: dict = field(default_factory=dict)
    mesh: TriangleMesh | None = None

    def __post_init__(self):
        if not self.bbox_diag > 0:
            raise ValueError("bbox_diag must be positive")


def target_from_mesh(mesh: TriangleMesh, dims=64, n_points=100_000, seed=0, normalize=True,
                     source="") -> ShapeTarget:
    """Normalize (bbox diagonal 1, centered), voxelize and sample a mesh."""
    if mesh.is_empty:
        raise ValueError("mesh has no triangles")
    diag = bbox_diagonal(mesh.vertices)
    if normalize:
        mesh, _, _ = normalize_mesh(mesh)
    grid, watertight = voxelize_solid(mesh, dims, return_flag=True)
    if not np.any(grid.values):
        raise ValueError("voxelization produced an empty grid")
    points = sample_volume_points(grid, n_points, seed)
    prov = {"source": str(source), "dims": list(grid.dims), "n_points": int(n_points), "seed": int(seed),
            "normalized": bool(normalize), "watertight": bool(watertight)}
    return ShapeTarget(points, grid, diag, prov, mesh)


def target_from_grid(grid: VoxelGrid, n_points=100_000, seed=0, source="") -> ShapeTarget:
    binary = VoxelGrid(grid.dims, grid.origin, grid.spacing, (grid.values > 0.5).astype(np.float64))
    points = sample_volume_points(binary, n_points, seed)
    occ = np.argwhere(binary.values > 0.5)[:, ::-1]
    lo = binary.origin + occ.min(axis=0) * binary.spacing
    hi = binary.origin + (occ.max(axis=0) + 1) * binary.spacing
    prov = {"source": str(source), "dims": list(grid.dims), "n_points": int(n_points), "seed": int(seed)}
    return ShapeTarget(points, binary, float(np.linalg.norm(hi - lo)), prov)


# Point clouds ----------------------------------------------------------------------

def load_xyz(path):
    """Whitespace-separated text, first three columns are x y z; '#' comments."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].replace(",", " ").split()
            if not parts:
                continue
            try:
                rows.append([float(p) for p in parts[:3]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad coordinate") from None
            if len(rows[-1]) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 coordinates")
            if not np.all(np.isfinite(rows[-1])):
                raise ValueError(f"{path}:{lineno}: non-finite coordinate")
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.array(rows)


def save_xyz(points, path) -> None:
    Path(path).write_text("".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in np.asarray(points)))


# Run-length occupancy (binvox) -------------------------------------------------------

def load_binvox(path) -> VoxelGrid:
    """Read the run-length occupancy format (``#binvox 1``).

    Voxel (x, y, z) is stored at run index ``x * d * d + z * d + y``; the
    grid spans ``translate`` to ``translate + scale`` on every axis.
    """
    raw = Path(path).read_bytes()
    pos = 0
    dims = translate = None
    scale = 1.0

    def next_line():
        nonlocal pos
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated header")
        line = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        return line

    if not next_line().startswith("#binvox"):
        raise ValueError(f"{path}: missing '#binvox' magic")
    while True:
        line = next_line()
        key, *vals = line.split()
        if key == "dim":
            dims = tuple(int(v) for v in vals)
        elif key == "translate":
            translate = np.array([float(v) for v in vals])
        elif key == "scale":
            scale = float(vals[0])
        elif key == "data":
            break
    if dims is None or len(dims) != 3:
        raise ValueError(f"{path}: missing 'dim' line")
    if translate is None:
        translate = np.zeros(3)
    pairs = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if len(pairs) % 2:
        raise ValueError(f"{path}: odd number of run-length bytes")
    values, counts = pairs[0::2], pairs[1::2].astype(np.int64)
    flat = np.repeat(values, counts)
    dx, dy, dz = dims
    if len(flat) != dx * dy * dz:
        raise ValueError(f"{path}: run lengths cover {len(flat)} voxels, expected {dx * dy * dz}")
    vox = flat.reshape(dx, dz, dy)  # [x, z, y]
    values = np.transpose(vox, (1, 2, 0)).astype(np.float64)  # -> [z, y, x]
    spacing = scale / max(dims)
    return VoxelGrid(dims, translate, spacing, values)


def save_binvox(grid: VoxelGrid, path) -> None:
    nx, ny, nz = grid.dims
    flat = (np.transpose(grid.values > 0.5, (2, 0, 1)).reshape(-1)).astype(np.uint8)  # [x, z, y]
    out = bytearray()
    i = 0
    while i < len(flat):
        v = flat[i]
        j = i
        while j < len(flat) and flat[j] == v and j - i < 255:
            j += 1
        out += bytes((int(v), j - i))
        i = j
    t = grid.origin
    header = (f"#binvox 1\ndim {nx} {ny} {nz}\ntranslate {t[0]:.9g} {t[1]:.9g} {t[2]:.9g}\n"
              f"scale {grid.spacing * max(grid.dims):.9g}\ndata\n").encode("ascii")
    Path(path).write_bytes(header + bytes(out))


def load_voxels(path) -> VoxelGrid:
    """Voxel grid from either the native binary format or binvox (by magic)."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"#binvox"):
        return load_binvox(path)
    return load_grid(path)


# View sets --------------------------------------------------------------------------

def make_view_set(mesh: TriangleMesh, n_views: int, subdivisions: int, seed: int, distance=None,
                  width=DEFAULT_SIZE, height=DEFAULT_SIZE, fov_deg=DEFAULT_FOV_DEG):
    """Cameras on icosphere vertices at ``distance`` (default: bbox diagonal) with mesh silhouettes."""
    if mesh.is_empty:
        raise ValueError("mesh has no triangles")
    if distance is None:
        distance = bbox_diagonal(mesh.vertices)
    cams = icosphere_viewpoints(subdivisions, n_views, seed, distance, width, height, fov_deg)
    return [(cam, rasterize_mesh_silhouette(mesh, cam)) for cam in cams]


def save_view_set(views, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_cameras([c for c, _ in views], d / "cameras.txt")
    for i, (_, img) in enumerate(views):
        write_pgm(img, d / f"{i:03d}.pgm")


def load_view_set(directory):
    d = Path(directory)
    if not (d / "cameras.txt").is_file():
        raise FileNotFoundError(f"{d}: no cameras.txt")
    cams = load_cameras(d / "cameras.txt")
    views = []
    for i, cam in enumerate(cams):
        img = read_pgm(d / f"{i:03d}.pgm")
        if img.values.shape != (cam.height, cam.width):
            raise ValueError(f"{d / f'{i:03d}.pgm'}: size {img.values.shape[::-1]} does not match camera {i}")
        views.append((cam, img))
    return views
