"""Pinhole cameras, icosphere viewpoints, para-perspective projection and silhouettes.

Camera frame convention: x right, y down, z forward (along the optical axis).
Pixel (row r, column c) has its center at image coordinates (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .mixture import GaussianMixture3

DEFAULT_SIZE = 128
DEFAULT_FOV_DEG = 68.0
# squared Mahalanobis radius beyond which a 2D component is treated as zero
SILHOUETTE_CUTOFF = 100.0


class DepthError(ValueError):
    """A component lies on or behind the camera plane."""

    def __init__(self, component, depth):
        super().__init__(f"component {component} has non-positive depth {depth:.6g}")
        self.component = component
        self.depth = depth


def focal_from_fov(size_px: float, fov_deg: float) -> float:
    return 0.5 * size_px / math.tan(math.radians(fov_deg) / 2.0)


@dataclass(frozen=True, eq=False)
class Camera:
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    focal_px: float
    principal_point: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        for name, val in (("rotation", R),
                          ("translation", np.array(self.translation, dtype=np.float64).reshape(3)),
                          ("principal_point", np.array(self.principal_point, dtype=np.float64).reshape(2))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "focal_px", float(self.focal_px))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def look_at(cls, position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                width=DEFAULT_SIZE, height=DEFAULT_SIZE, fov_deg=DEFAULT_FOV_DEG):
        position = np.asarray(position, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - position
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        if abs(abs(np.dot(z, up) / np.linalg.norm(up)) - 1.0) < 1e-6:
            up = np.array([1.0, 0.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(R, -R @ position, focal_from_fov(width, fov_deg),
                   (width / 2.0, height / 2.0), width, height)

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project_points(self, points):
        pc = self.to_camera(points)
        return self.focal_px * pc[:, :2] / pc[:, 2:3] + self.principal_point

    def rolled(self, angle):
        """Same camera rotated by ``angle`` radians about its optical axis."""
        c, s = math.cos(angle), math.sin(angle)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Camera(Rz @ self.rotation, Rz @ self.translation, self.focal_px,
                      self.principal_point, self.width, self.height)


@dataclass(frozen=True, eq=False)
class GaussianMixture2:
    weights: np.ndarray
    means: np.ndarray  # (K, 2) pixels
    covariances: np.ndarray  # (K, 2, 2) pixels^2


@dataclass(frozen=True, eq=False)
class SilhouetteImage:
    values: np.ndarray  # (height, width) in [0, 1]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("silhouette must be a 2D array")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("silhouette values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


# Icosphere ------------------------------------------------------------------

def icosphere(subdivisions: int):
    """Vertices (unit norm) and faces of a subdivided icosahedron."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def icosphere_viewpoints(subdivisions: int, count: int, seed: int, distance: float = 1.0,
                         width=DEFAULT_SIZE, height=DEFAULT_SIZE, fov_deg=DEFAULT_FOV_DEG):
    """``count`` cameras on distinct icosphere vertices, all looking at the origin."""
    verts, _ = icosphere(subdivisions)
    if count > len(verts):
        raise ValueError(f"count={count} exceeds the {len(verts)} vertices at subdivision {subdivisions}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(verts), size=count, replace=False)
    return [Camera.look_at(distance * verts[i], width=width, height=height, fov_deg=fov_deg) for i in chosen]


# Projection -----------------------------------------------------------------

def projection_terms(means, covariances, cam: Camera):
    """Para-perspective projection of Gaussians.

    Returns ``(mu2, cov2, J, mu_c)``: projected means (K, 2), projected
    covariances (K, 2, 2), the perspective Jacobians at the camera-frame
    means (K, 2, 3) and the camera-frame means (K, 3).
    """
    R = cam.rotation
    mu_c = means @ R.T + cam.translation
    z = mu_c[:, 2]
    bad = np.flatnonzero(z <= 1e-6)
    if len(bad):
        raise DepthError(int(bad[0]), float(z[bad[0]]))
    f = cam.focal_px
    x_n = mu_c[:, 0] / z
    y_n = mu_c[:, 1] / z
    mu2 = f * np.stack([x_n, y_n], axis=1) + cam.principal_point
    J = np.zeros((len(z), 2, 3))
    s = f / z
    J[:, 0, 0] = s
    J[:, 1, 1] = s
    J[:, 0, 2] = -s * x_n
    J[:, 1, 2] = -s * y_n
    A = J @ R
    cov2 = A @ covariances @ np.swapaxes(A, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
    return mu2, cov2, J, mu_c


def paraperspective_project(m: GaussianMixture3, cam: Camera) -> GaussianMixture2:
    mu2, cov2, _, _ = projection_terms(m.means, m.covariances, cam)
    return GaussianMixture2(m.weights.copy(), mu2, cov2)


def pixel_density(m2: GaussianMixture2, width: int, height: int, cutoff=SILHOUETTE_CUTOFF):
    """2D mixture density at pixel centers, in probability mass per pixel."""
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    d = np.zeros((height, width))
    for w, mu, S in zip(m2.weights, m2.means, m2.covariances):
        Si = np.linalg.inv(S)
        dx = u[None, :] - mu[0]
        dy = v[:, None] - mu[1]
        maha = Si[0, 0] * dx * dx + (Si[0, 1] + Si[1, 0]) * dx * dy + Si[1, 1] * dy * dy
        d += np.where(maha <= cutoff, w * np.exp(-0.5 * np.minimum(maha, cutoff)), 0.0) / (
            2.0 * np.pi * math.sqrt(np.linalg.det(S)))
    return d


def soft_silhouette(m2: GaussianMixture2, q: int, cam: Camera) -> SilhouetteImage:
    """Probability that at least one of q draws from the 2D mixture lands in each pixel."""
    if q < 1:
        raise ValueError("q must be >= 1")
    target = np.zeros((cam.height, cam.width))
    _, shat, *_ = kernels.silhouette_loss(m2.weights, m2.means, m2.covariances, target, int(q),
                                         SILHOUETTE_CUTOFF, False)
    return SilhouetteImage(np.clip(shat, 0.0, 1.0))


def rasterize_mesh_silhouette(mesh, cam: Camera) -> SilhouetteImage:
    """Binary coverage image of a triangle mesh (all vertices must be in front of the camera)."""
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    tris = np.asarray(mesh.triangles, dtype=np.int64)
    if len(tris) == 0:
        raise ValueError("mesh has no triangles")
    pc = cam.to_camera(verts)
    if np.any(pc[:, 2] <= 1e-9):
        raise ValueError("mesh crosses the camera plane")
    uv = cam.focal_px * pc[:, :2] / pc[:, 2:3] + cam.principal_point
    img = kernels.rasterize_triangles(uv[tris], cam.width, cam.height)
    return SilhouetteImage(img.astype(np.float64))


# File formats ---------------------------------------------------------------

def write_pgm(image: SilhouetteImage, path) -> None:
    data = np.round(np.clip(image.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> SilhouetteImage:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return SilhouetteImage(data.reshape(h, w) / float(maxval))


def dumps_cameras(cams) -> str:
    lines = ["# r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz focal_px cx cy width height"]
    for c in cams:
        vals = [*c.rotation.ravel(), *c.translation, c.focal_px, *c.principal_point]
        lines.append(" ".join(format(float(v), ".17g") for v in vals) + f" {c.width} {c.height}")
    return "\n".join(lines) + "\n"


def loads_cameras(text: str):
    cams = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 17:
            raise ValueError(f"camera line {lineno}: expected 17 values, got {len(parts)}")
        v = [float(p) for p in parts]
        cams.append(Camera(np.reshape(v[:9], (3, 3)), v[9:12], v[12], v[13:15], int(v[15]), int(v[16])))
    return cams


def save_cameras(cams, path) -> None:
    Path(path).write_text(dumps_cameras(cams))


def load_cameras(path):
    return loads_cameras(Path(path).read_text())
