"""Linear morphable face model: shape/texture assembly, MBF file I/O and a
synthetic basis generator.

A real face basis (BFM-style) can be used by converting it to the MBF
container; everything in the test-suite runs on generated bases.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MBF1\0\0\0\0"
DEFAULT_DIMS = (80, 64, 80)
N_LANDMARKS = 68
# 68-point convention: mouth landmarks (outer + inner lip contour).
LIP_SLICE = slice(48, 68)


class BasisFormatError(ValueError):
    """Raised when an MBF file is malformed."""


class BasisTruncatedError(BasisFormatError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MorphableBasis:
    """Mean shape/texture plus identity, expression and texture bases.

    Vectors are flattened per vertex as ``[x0, y0, z0, x1, ...]`` (or RGB for
    texture). All float arrays hold float32-representable float64 values so
    that an MBF round trip is bit-exact.
    """

    mean_shape: np.ndarray
    mean_texture: np.ndarray
    basis_id: np.ndarray
    basis_exp: np.ndarray
    basis_tex: np.ndarray
    triangles: np.ndarray
    landmark_indices: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("mean_shape", "mean_texture", "basis_id", "basis_exp", "basis_tex"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("triangles", "landmark_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.basis_id.shape[1], self.basis_exp.shape[1], self.basis_tex.shape[1])

    @property
    def lip_landmarks(self) -> np.ndarray:
        """Positions (into landmark_indices) of the lip landmarks."""
        n = len(self.landmark_indices)
        if n == N_LANDMARKS:
            return np.arange(n)[LIP_SLICE]
        return np.asarray(self.meta.get("lip_landmarks", np.arange(n)), dtype=np.int64)

    def validate(self) -> None:
        n3 = self.mean_shape.shape[0]
        if self.mean_shape.ndim != 1 or n3 % 3:
            raise DimensionError("mean_shape must be a flat vector of length 3V")
        if self.mean_texture.shape != (n3,):
            raise DimensionError("mean_texture length must equal 3V")
        for name in ("basis_id", "basis_exp", "basis_tex"):
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[0] != n3:
                raise DimensionError(f"{name} must have 3V={n3} rows, got {mat.shape}")
        v = n3 // 3
        tri = self.triangles
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise DimensionError("triangles must be a T x 3 index array")
        if tri.size and (tri.min() < 0 or tri.max() >= v):
            raise DimensionError("triangle index out of range")
        lmk = self.landmark_indices
        if lmk.size and (lmk.min() < 0 or lmk.max() >= v):
            raise DimensionError("landmark index out of range")
        if np.any(self.mean_texture < 0) or np.any(self.mean_texture > 1):
            raise DimensionError("mean_texture must lie in [0, 1]")
        for name in ("mean_shape", "basis_id", "basis_exp", "basis_tex"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DimensionError(f"{name} has non-finite entries")

    def vertices(self, shape: np.ndarray) -> np.ndarray:
        """View a flat 3V shape vector as V x 3."""
        return np.asarray(shape).reshape(-1, 3)


@dataclass
class ShapeCoeffs:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class TextureCoeffs:
    delta: np.ndarray


def _check_len(vec, n, what):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (n,):
        raise DimensionError(f"{what}: expected length {n}, got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise DimensionError(f"{what}: non-finite coefficients")
    return vec


def assemble_shape(basis: MorphableBasis, c: ShapeCoeffs) -> np.ndarray:
    """S = S_mean + B_id @ alpha + B_exp @ beta (flat, length 3V)."""
    d_id, d_exp, _ = basis.dims
    alpha = _check_len(c.alpha, d_id, "alpha")
    beta = _check_len(c.beta, d_exp, "beta")
    return basis.mean_shape + basis.basis_id @ alpha + basis.basis_exp @ beta


def assemble_texture(basis: MorphableBasis, c: TextureCoeffs) -> np.ndarray:
    """T = T_mean + B_tex @ delta. Not clamped; clamping happens at render time."""
    delta = _check_len(c.delta, basis.dims[2], "delta")
    return basis.mean_texture + basis.basis_tex @ delta


# ---------------------------------------------------------------------------
# MBF container
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8s6I")


def save_basis(basis: MorphableBasis, path) -> None:
    v = basis.n_vertices
    d_id, d_exp, d_tex = basis.dims
    parts = [
        _HEADER.pack(MAGIC, v, d_id, d_exp, d_tex, len(basis.triangles), len(basis.landmark_indices))
    ]
    for arr in (basis.mean_shape, basis.mean_texture, basis.basis_id, basis.basis_exp, basis.basis_tex):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(basis.triangles, dtype="<u4").tobytes())
    parts.append(np.ascontiguousarray(basis.landmark_indices, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_basis(path) -> MorphableBasis:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if not MAGIC.startswith(data[:8]):
            raise BasisFormatError(f"{path}: bad magic")
        raise BasisTruncatedError(f"{path}: truncated header")
    magic, v, d_id, d_exp, d_tex, n_tri, n_lmk = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BasisFormatError(f"{path}: bad magic {magic!r}")
    n3 = 3 * v
    float_counts = [n3, n3, n3 * d_id, n3 * d_exp, n3 * d_tex]
    int_counts = [3 * n_tri, n_lmk]
    expected = _HEADER.size + 4 * (sum(float_counts) + sum(int_counts))
    if len(data) < expected:
        raise BasisTruncatedError(f"{path}: expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise BasisFormatError(f"{path}: {len(data) - expected} trailing bytes")
    off = _HEADER.size
    floats = []
    for cnt in float_counts:
        floats.append(np.frombuffer(data, dtype="<f4", count=cnt, offset=off).astype(np.float64))
        off += 4 * cnt
    ints = []
    for cnt in int_counts:
        ints.append(np.frombuffer(data, dtype="<u4", count=cnt, offset=off).astype(np.int64))
        off += 4 * cnt
    try:
        return MorphableBasis(
            mean_shape=floats[0],
            mean_texture=floats[1],
            basis_id=floats[2].reshape(n3, d_id),
            basis_exp=floats[3].reshape(n3, d_exp),
            basis_tex=floats[4].reshape(n3, d_tex),
            triangles=ints[0].reshape(n_tri, 3),
            landmark_indices=ints[1],
        )
    except DimensionError as exc:
        raise BasisFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# synthetic basis
# ---------------------------------------------------------------------------

# Face-frame template for the 68-point layout (x right, y up, face spans
# roughly [-0.85, 0.85] x [-1, 1]). Only the left half and the centre line
# are listed; right-side points are mirrored vertex-exactly.
_MIRROR = {}
for _a, _b in [(0, 16), (1, 15), (2, 14), (3, 13), (4, 12), (5, 11), (6, 10), (7, 9),
               (17, 26), (18, 25), (19, 24), (20, 23), (21, 22),
               (31, 35), (32, 34),
               (36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46),
               (48, 54), (49, 53), (50, 52), (59, 55), (58, 56),
               (60, 64), (61, 63), (67, 65)]:
    _MIRROR[_b] = _a
_CENTRE = [8, 27, 28, 29, 30, 33, 51, 57, 62, 66]


def _landmark_template() -> np.ndarray:
    pts = np.zeros((N_LANDMARKS, 2))
    for k in range(17):
        ang = np.pi * k / 16
        pts[k] = (-0.74 * np.cos(ang), 0.2 - 1.05 * np.sin(ang))
    pts[17:22] = [(-0.6, 0.45), (-0.5, 0.52), (-0.38, 0.55), (-0.26, 0.53), (-0.15, 0.48)]
    pts[27:31] = [(0, 0.36), (0, 0.24), (0, 0.12), (0, 0.0)]
    pts[31:36] = [(-0.18, -0.14), (-0.09, -0.16), (0, -0.17), (0.09, -0.16), (0.18, -0.14)]
    pts[36:42] = [(-0.5, 0.28), (-0.41, 0.34), (-0.29, 0.34), (-0.2, 0.28), (-0.29, 0.22), (-0.41, 0.22)]
    pts[48:51] = [(-0.32, -0.44), (-0.21, -0.37), (-0.09, -0.34)]
    pts[51] = (0, -0.35)
    pts[57] = (0, -0.58)
    pts[58:60] = [(-0.1, -0.57), (-0.21, -0.53)]
    pts[60:62] = [(-0.25, -0.445), (-0.11, -0.41)]
    pts[62] = (0, -0.41)
    pts[66] = (0, -0.49)
    pts[67] = (-0.11, -0.485)
    for right, left in _MIRROR.items():
        pts[right] = (-pts[left, 0], pts[left, 1])
    return pts


def _grid_shape(v_target: int) -> tuple[int, int]:
    n_lon = int(round(np.sqrt(v_target * 0.8)))
    n_lon = max(5, n_lon + (1 - n_lon % 2))  # odd: keeps a centre column
    n_lat = max(4, int(np.ceil(v_target / n_lon)))
    return n_lat, n_lon


def _symmetric_linspace(lo: float, n: int) -> np.ndarray:
    t = lo * np.linspace(-1.0, 1.0, n)
    return 0.5 * (t - t[::-1])


def _bump_field(points, centre, radius):
    d2 = np.sum((points - centre) ** 2, axis=1)
    w = np.exp(-d2 / (2 * radius**2))
    w[d2 >= (3 * radius) ** 2] = 0.0
    return w


def _to_f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def generate_synthetic_basis(seed: int, v_target: int = 1500, dims=DEFAULT_DIMS) -> MorphableBasis:
    """Deterministic face-like basis on a tessellated ellipsoid cap.

    Identity and texture columns are sums of truncated Gaussian bumps spread
    over the face; expression bumps sit in the lower third (mouth/jaw). Shape
    columns are scaled so a unit coefficient moves some vertex by 2% of the
    bounding-box diagonal.
    """
    if v_target < 16:
        raise ValueError(f"v_target must be >= 16, got {v_target}")
    d_id, d_exp, d_tex = (int(d) for d in dims)
    if min(d_id, d_exp, d_tex) < 0:
        raise ValueError("dims must be non-negative")
    rng = np.random.default_rng(seed)

    n_lat, n_lon = _grid_shape(v_target)
    lon = _symmetric_linspace(1.15, n_lon)
    lat = _symmetric_linspace(1.1, n_lat)
    LAT, LON = np.meshgrid(lat, lon, indexing="ij")
    a, b, c = 0.85, 1.05, 0.75
    x = a * np.sin(LON) * np.cos(LAT)
    y = b * np.sin(LAT)
    z = c * np.cos(LON) * np.cos(LAT)
    # nose ridge and tip, mirror-symmetric in x
    z = z + 0.22 * np.exp(-(x**2) / (2 * 0.07**2) - (y - 0.0) ** 2 / (2 * 0.16**2))
    z = z + 0.06 * np.exp(-(x**2) / (2 * 0.05**2) - (y - 0.2) ** 2 / (2 * 0.2**2))
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    v = pts.shape[0]

    idx = np.arange(v).reshape(n_lat, n_lon)
    v00 = idx[:-1, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v10 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    triangles = np.concatenate(
        [np.stack([v00, v01, v10], 1), np.stack([v01, v11, v10], 1)], axis=0
    )

    diag = float(np.linalg.norm(pts.max(0) - pts.min(0)))
    target = 0.02 * diag

    def shape_column(region_y, radii, n_bumps):
        col = np.zeros((v, 3))
        for _ in range(n_bumps):
            while True:
                centre = pts[rng.integers(v)]
                if region_y[0] <= centre[1] <= region_y[1] and abs(centre[0]) <= 0.65:
                    break
            radius = rng.uniform(*radii)
            direction = rng.normal(size=3)
            direction[2] += 1.5 * np.sign(rng.normal())
            direction /= np.linalg.norm(direction)
            col += _bump_field(pts, centre, radius)[:, None] * direction
        scale = np.max(np.linalg.norm(col, axis=1))
        return (col * (target / scale)).ravel()

    basis_id = np.stack([shape_column((-1.0, 1.0), (0.2, 0.45), 3) for _ in range(d_id)], 1) if d_id else np.zeros((3 * v, 0))
    basis_exp = np.stack([shape_column((-0.85, -0.3), (0.1, 0.22), 2) for _ in range(d_exp)], 1) if d_exp else np.zeros((3 * v, 0))

    tex = np.tile([0.78, 0.58, 0.48], (v, 1))
    tex -= 0.08 * (pts[:, 1:2] + 1.0) / 2.0 * np.array([0.4, 1.0, 1.0])
    lips = np.exp(-(pts[:, 0] / 0.26) ** 2 - ((pts[:, 1] + 0.46) / 0.09) ** 2)
    tex += lips[:, None] * np.array([-0.08, -0.3, -0.22])
    for sx in (-1, 1):
        eye = np.exp(-((pts[:, 0] - sx * 0.35) / 0.12) ** 2 - ((pts[:, 1] - 0.28) / 0.05) ** 2)
        brow = np.exp(-((pts[:, 0] - sx * 0.38) / 0.2) ** 2 - ((pts[:, 1] - 0.52) / 0.035) ** 2)
        tex -= (0.5 * eye + 0.35 * brow)[:, None] * np.array([0.9, 0.85, 0.8])
    mean_texture = np.clip(tex, 0.04, 0.96).ravel()

    def tex_column():
        col = np.zeros((v, 3))
        for _ in range(3):
            centre = pts[rng.integers(v)]
            col += _bump_field(pts, centre, rng.uniform(0.2, 0.5))[:, None] * rng.normal(size=3)
        return (col * (0.05 / np.max(np.abs(col)))).ravel()

    basis_tex = np.stack([tex_column() for _ in range(d_tex)], 1) if d_tex else np.zeros((3 * v, 0))

    landmark_indices = _pick_landmarks(pts, n_lat, n_lon)

    return MorphableBasis(
        mean_shape=_to_f32(pts.ravel()),
        mean_texture=_to_f32(mean_texture),
        basis_id=_to_f32(basis_id),
        basis_exp=_to_f32(basis_exp),
        basis_tex=_to_f32(basis_tex),
        triangles=triangles,
        landmark_indices=landmark_indices,
        meta={"grid": (n_lat, n_lon), "seed": seed},
    )


def _pick_landmarks(pts: np.ndarray, n_lat: int, n_lon: int) -> np.ndarray:
    """Nearest-vertex assignment of the 68-point template, mirror-exact."""
    template = _landmark_template()
    xy = pts[:, :2]
    used: set[int] = set()
    out = np.zeros(N_LANDMARKS, dtype=np.int64)

    def mirror(vid):
        i, j = divmod(int(vid), n_lon)
        return i * n_lon + (n_lon - 1 - j)

    col = np.arange(len(pts)) % n_lon
    centre_col = np.flatnonzero(col == n_lon // 2)
    left_cols = np.flatnonzero(col < n_lon // 2)
    order = [k for k in range(N_LANDMARKS) if k in _CENTRE or k not in _MIRROR]
    for k in order:
        pool = centre_col if k in _CENTRE else left_cols
        d = np.sum((xy[pool] - template[k]) ** 2, axis=1)
        for cand in pool[np.argsort(d, kind="stable")]:
            if int(cand) not in used and (k in _CENTRE or mirror(cand) not in used):
                break
        else:
            cand = pool[np.argmin(d)]
        out[k] = cand
        used.add(int(cand))
        if k not in _CENTRE:
            used.add(mirror(cand))
    for right, left in _MIRROR.items():
        out[right] = mirror(out[left])
    return out


def boundary_vertices(triangles: np.ndarray) -> np.ndarray:
    """Vertices on mesh boundary edges (edges used by exactly one triangle)."""
    tri = np.asarray(triangles)
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def mirror_pairs() -> list[tuple[int, int]]:
    """(left, right) landmark pairs of the 68-point layout."""
    return sorted((left, right) for right, left in _MIRROR.items())


def make_ambiguous_basis(basis: MorphableBasis, id_col: int = 0, exp_col: int = 0) -> MorphableBasis:
    """Copy of ``basis`` whose identity column ``id_col`` equals expression
    column ``exp_col``, so that deformation is explainable by either."""
    b_id = basis.basis_id.copy()
    b_id[:, id_col] = basis.basis_exp[:, exp_col]
    return MorphableBasis(
        mean_shape=basis.mean_shape,
        mean_texture=basis.mean_texture,
        basis_id=b_id,
        basis_exp=basis.basis_exp,
        basis_tex=basis.basis_tex,
        triangles=basis.triangles,
        landmark_indices=basis.landmark_indices,
        meta=dict(basis.meta),
    )
