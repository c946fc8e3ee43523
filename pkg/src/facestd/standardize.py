"""Standardised re-rendering from expression only, plus the synthetic scene
generator used as ground truth.

A standardised frame keeps the estimated expression and pins identity,
texture, pose and lighting to fixed defaults, so nothing but expression can
vary between frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import MorphableBasis
from .landmarks import reproject_landmarks, write_landmarks
from .pnm import write_image
from .render import CoefficientSet, render, render_pseudo_depth
from .scene import SH_C0, SH_C1, Camera, Pose, white_gamma, N_SH

FILL_FRACTION = 0.85


def default_pose(basis: MorphableBasis, cam: Camera, fill: float = FILL_FRACTION) -> Pose:
    """Frontal pose centring the mean face so it spans ``fill`` of the frame."""
    pts = basis.vertices(basis.mean_shape)
    lo, hi = pts.min(0), pts.max(0)
    centre = 0.5 * (lo + hi)
    extent = hi[:2] - lo[:2]
    frame = np.array([cam.width, cam.height], dtype=np.float64)
    depth = cam.focal * float(np.max(extent / (fill * frame)))
    # depth measured to the front-most point so the face is not cropped
    tz = -depth - hi[2]
    return Pose(np.zeros(3), np.array([-centre[0], -centre[1], tz]))


@dataclass
class StandardizationDefaults:
    gamma0: np.ndarray
    pose0: Pose
    cam0: Camera

    def __post_init__(self):
        g = np.asarray(self.gamma0, dtype=np.float64).reshape(3, N_SH)
        if np.any(g[:, 1:] != 0):
            raise ValueError("default illumination must be DC-only")
        if np.any(self.pose0.euler != 0):
            raise ValueError("default pose must be frontal")
        self.gamma0 = g.ravel()

    @classmethod
    def for_basis(cls, basis: MorphableBasis, cam: Camera | None = None) -> "StandardizationDefaults":
        cam = cam or Camera.centered()
        return cls(white_gamma(), default_pose(basis, cam), cam)


def standard_coefficients(basis: MorphableBasis, beta_hat, defaults: StandardizationDefaults) -> CoefficientSet:
    """Mean identity, mean texture, default light and pose, given expression."""
    beta = np.asarray(beta_hat, dtype=np.float64)
    if beta.shape != (basis.dims[1],):
        raise ValueError(f"expression must have {basis.dims[1]} entries")
    c = CoefficientSet.zeros(basis, defaults.gamma0.copy(), Pose(defaults.pose0.euler, defaults.pose0.translation))
    c.beta = beta.copy()
    return c


@dataclass
class StandardFrame:
    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray


def standardize_image(basis: MorphableBasis, beta_hat, defaults: StandardizationDefaults) -> StandardFrame:
    coeffs = standard_coefficients(basis, beta_hat, defaults)
    img = render(basis, coeffs, defaults.cam0)
    depth, _ = render_pseudo_depth(basis, coeffs, defaults.cam0)
    return StandardFrame(img.rgb, depth, img.mask)


def standardize_collection(basis: MorphableBasis, estimate, defaults: StandardizationDefaults) -> list[StandardFrame]:
    return [standardize_image(basis, img.beta, defaults) for img in estimate.per_image]


def write_standardized(frames, out_dir, names=None) -> Path:
    """Write paired PPM/PGM files and a manifest "<index> <rgb> <depth>"."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, fr in enumerate(frames):
        stem = names[i] if names is not None else f"{i:05d}"
        rgb_name, depth_name = f"{stem}.rgb.ppm", f"{stem}.depth.pgm"
        write_image(fr.rgb, out / rgb_name, "rgb8")
        write_image(fr.depth, out / depth_name, "depth16")
        lines.append(f"{i} {rgb_name} {depth_name}\n")
    manifest = out / "manifest.txt"
    manifest.write_text("".join(lines))
    return manifest


# ---------------------------------------------------------------------------
# synthetic ground-truth scenes
# ---------------------------------------------------------------------------


@dataclass
class SceneRanges:
    """Sampling spreads for synthetic collections (all zero => mean face)."""

    sigma_id: float = 1.0
    sigma_tex: float = 1.0
    sigma_exp: float = 0.8
    pitch: float = 0.15
    yaw: float = 0.3
    roll: float = 0.1
    shift: float = 0.08  # translation jitter, model units
    base_level: float = 0.9  # irradiance along the light direction
    light_level: float = 0.15  # brightness jitter (fraction)
    light_dir: float = 0.3  # directional share of the irradiance
    light_band2: float = 0.1
    landmark_noise: float = 0.0  # px

    @classmethod
    def zero(cls) -> "SceneRanges":
        z = cls(**{k: 0.0 for k in vars(cls())})
        z.base_level = 1.0
        return z


def sample_gamma(rng: np.random.Generator, ranges: SceneRanges) -> np.ndarray:
    """Random light whose irradiance along the light direction is about ``level``.

    The level is split between the ambient (DC) term and a band-1
    directional term, so brighter directional light does not push typical
    albedos into saturation.
    """
    g = np.zeros((3, N_SH))
    level = ranges.base_level * (1.0 + ranges.light_level * rng.uniform(-1, 1))
    tint = 1.0 + 0.5 * ranges.light_level * rng.uniform(-1, 1, size=3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    direction[2] = abs(direction[2])  # light from the camera side
    band2 = ranges.light_band2 * rng.uniform(-1, 1, size=5)
    for ch in range(3):
        lv = level * tint[ch]
        g[ch, 0] = (1.0 - ranges.light_dir) * lv / SH_C0
        # SH order (y, z, x) for band 1
        g[ch, 1:4] = ranges.light_dir * lv / SH_C1 * np.array([direction[1], direction[2], direction[0]])
        g[ch, 4:] = lv * band2 / SH_C0
    return g.ravel()


def sample_scene_coefficients(basis, rng, m, ranges: SceneRanges, cam: Camera, betas=None):
    """Shared identity/texture, per-frame expression/pose/light."""
    d_id, d_exp, d_tex = basis.dims
    alpha = ranges.sigma_id * rng.normal(size=d_id)
    delta = ranges.sigma_tex * rng.normal(size=d_tex)
    base = default_pose(basis, cam)
    out = []
    for i in range(m):
        beta = ranges.sigma_exp * rng.normal(size=d_exp)
        if betas is not None:
            beta = np.asarray(betas[i], dtype=np.float64).copy()
        euler = np.array([ranges.pitch, ranges.yaw, ranges.roll]) * rng.uniform(-1, 1, size=3)
        shift = ranges.shift * rng.uniform(-1, 1, size=3)
        pose = Pose(euler, base.translation + shift)
        out.append(CoefficientSet(alpha.copy(), beta, delta.copy(), sample_gamma(rng, ranges), pose))
    return out


@dataclass
class SyntheticScene:
    collection: object
    ground_truth: list[CoefficientSet]
    landmarks: list[np.ndarray] = field(default_factory=list)


def generate_synthetic_scene(
    basis: MorphableBasis,
    seed,
    m: int,
    cam: Camera,
    out_dir,
    ranges: SceneRanges | None = None,
    betas=None,
    collection_id: str | None = None,
) -> SyntheticScene:
    """Render one ground-truth collection to ``out_dir`` in the dataset layout.

    Writes ``<frame>.ppm``, ``<frame>.lmk`` and a ``<frame>.gt.coef`` sidecar
    holding the generating coefficients.
    """
    from .coeffio import write_coefficients
    from .dataset import scan_collection

    ranges = ranges or SceneRanges()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = Path(out_dir)
    if collection_id is not None:
        out = out / collection_id
    out.mkdir(parents=True, exist_ok=True)
    gts = sample_scene_coefficients(basis, rng, m, ranges, cam, betas)
    marks = []
    for i, gt in enumerate(gts):
        stem = f"frame{i:03d}"
        img = render(basis, gt, cam)
        write_image(img.rgb, out / f"{stem}.ppm", "rgb8")
        rep = reproject_landmarks(basis, gt, cam)
        pts = rep.points.copy()
        if ranges.landmark_noise > 0:
            pts += ranges.landmark_noise * rng.normal(size=pts.shape)
        write_landmarks(pts, out / f"{stem}.lmk")
        write_coefficients(out / f"{stem}.gt.coef", gt)
        marks.append(pts)
    coll, problems = scan_collection(out)
    if problems:
        raise RuntimeError("; ".join(problems))
    return SyntheticScene(coll, gts, marks)
