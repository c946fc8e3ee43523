"""Pose, perspective camera, vertex normals and spherical-harmonics shading.

Conventions: right-handed camera frame looking down -z, image y axis pointing
down, Euler angles applied as R = Rz(roll) @ Ry(yaw) @ Rx(pitch).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Real SH basis, bands 0-2, evaluated on a unit normal (x, y, z):
#   Y0  = 1 / (2 sqrt(pi))
#   Y1  = sqrt(3 / 4pi) * y      Y2 = sqrt(3 / 4pi) * z      Y3 = sqrt(3 / 4pi) * x
#   Y4  = sqrt(15 / 4pi) * x y   Y5 = sqrt(15 / 4pi) * y z
#   Y6  = sqrt(5 / 16pi) * (3 z^2 - 1)
#   Y7  = sqrt(15 / 4pi) * x z   Y8 = sqrt(15 / 16pi) * (x^2 - y^2)
SH_C0 = 1.0 / (2.0 * math.sqrt(math.pi))
SH_C1 = math.sqrt(3.0 / (4.0 * math.pi))
SH_C2 = math.sqrt(15.0 / (4.0 * math.pi))
SH_C3 = math.sqrt(5.0 / (16.0 * math.pi))
SH_C4 = math.sqrt(15.0 / (16.0 * math.pi))
# DC coefficient that makes shading the identity. Computed as 1/SH_C0 rather
# than 2*sqrt(pi): only the former multiplies back to exactly 1.0 in float64.
DC_WHITE = 1.0 / SH_C0
N_SH = 9
N_GAMMA = 27

NEAR_EPS = 1e-6


@dataclass
class Pose:
    """Rigid pose: Euler angles (pitch, yaw, roll) in radians + translation."""

    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.euler = np.asarray(self.euler, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.euler, self.translation])

    @classmethod
    def from_vector(cls, p) -> "Pose":
        p = np.asarray(p, dtype=np.float64)
        return cls(p[:3].copy(), p[3:6].copy())


@dataclass
class Camera:
    focal: float = 1015.0
    principal_point: tuple[float, float] = (112.0, 112.0)
    image_size: tuple[int, int] = (224, 224)  # (width, height)

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ValueError("image must be at least 8x8")
        self.image_size = (int(w), int(h))
        self.principal_point = (float(self.principal_point[0]), float(self.principal_point[1]))

    @classmethod
    def centered(cls, focal=1015.0, width=224, height=224) -> "Camera":
        return cls(focal, (width / 2.0, height / 2.0), (width, height))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]


def _axis_rotations(euler):
    pitch, yaw, roll = (float(a) for a in euler)
    cx, sx = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cz, sz = math.cos(roll), math.sin(roll)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sx, -cx], [0, cx, -sx]])
    dry = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]])
    drz = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0]])
    return (rx, ry, rz), (drx, dry, drz)


def rotation_matrix(pose: Pose) -> np.ndarray:
    (rx, ry, rz), _ = _axis_rotations(pose.euler)
    return rz @ ry @ rx


def rotation_derivatives(pose: Pose) -> np.ndarray:
    """dR/d(pitch, yaw, roll) stacked as a 3 x 3 x 3 array."""
    (rx, ry, rz), (drx, dry, drz) = _axis_rotations(pose.euler)
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def transform_vertices(shape: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply v -> R v + t to a flat 3V vector; returns a flat vector."""
    shape = np.asarray(shape, dtype=np.float64)
    if shape.ndim != 1 or shape.size % 3:
        raise ValueError("shape length must be divisible by 3")
    pts = shape.reshape(-1, 3)
    return (pts @ rotation_matrix(pose).T + pose.translation).ravel()


def project(points_camera: np.ndarray, cam: Camera):
    """Perspective projection of camera-frame points.

    Returns (uv, depth, valid): uv is N x 2 pixel coordinates, depth is -z and
    valid flags points in front of the camera. Invalid rows of uv are NaN.
    """
    pts = np.asarray(points_camera, dtype=np.float64).reshape(-1, 3)
    depth = -pts[:, 2]
    valid = depth > NEAR_EPS
    safe = np.where(valid, depth, 1.0)
    cx, cy = cam.principal_point
    u = cam.focal * pts[:, 0] / safe + cx
    v = cam.focal * (-pts[:, 1]) / safe + cy
    uv = np.stack([u, v], axis=1)
    uv[~valid] = np.nan
    return uv, depth, valid


def vertex_normals(shape: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals (flat 3V). Isolated vertices get +z."""
    pts = np.asarray(shape, dtype=np.float64).reshape(-1, 3)
    tri = np.asarray(triangles, dtype=np.int64)
    # unnormalised cross product has length 2*area: area weighting for free
    fn = np.cross(pts[tri[:, 1]] - pts[tri[:, 0]], pts[tri[:, 2]] - pts[tri[:, 0]])
    acc = np.zeros_like(pts)
    for k in range(3):
        np.add.at(acc, tri[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(pts)
    ok = norm > 0
    out[ok] = acc[ok] / norm[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)
    return out.ravel()


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Evaluate the 9 SH functions at each normal; returns V x 9."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    return np.stack(
        [
            np.full_like(x, SH_C0),
            SH_C1 * y,
            SH_C1 * z,
            SH_C1 * x,
            SH_C2 * x * y,
            SH_C2 * y * z,
            SH_C3 * (3.0 * z * z - 1.0),
            SH_C2 * x * z,
            SH_C4 * (x * x - y * y),
        ],
        axis=1,
    )


def gamma_matrix(gamma) -> np.ndarray:
    """Reshape the 27-vector into 3 x 9 (channel-major R, G, B blocks)."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (N_GAMMA,):
        raise ValueError(f"gamma must have {N_GAMMA} entries, got {g.shape}")
    return g.reshape(3, N_SH)


def white_gamma(level: float = 1.0) -> np.ndarray:
    """DC-only illumination scaling albedo by ``level`` in every channel."""
    g = np.zeros((3, N_SH))
    g[:, 0] = DC_WHITE * level
    return g.ravel()


def irradiance(normals: np.ndarray, gamma) -> np.ndarray:
    """Per-vertex, per-channel SH factor (V x 3)."""
    return sh_basis(normals) @ gamma_matrix(gamma).T


def shade(texture: np.ndarray, normals: np.ndarray, gamma) -> np.ndarray:
    """Lambertian SH radiosity t' = t * sum_b gamma_b Phi_b(n), per channel."""
    texture = np.asarray(texture, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    if texture.shape != normals.shape:
        raise ValueError("texture and normals must have equal length")
    return (texture.reshape(-1, 3) * irradiance(normals, gamma)).ravel()
