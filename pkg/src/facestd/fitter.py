"""Collection-constrained analysis-by-synthesis fitting.

All images of a collection share one identity vector and one texture
vector; expression, pose and illumination are free per image. Each outer
iteration runs

1. a Levenberg-damped Gauss-Newton solve of the landmark + prior objective
   over ``[alpha; beta_1, pose_1; ...; beta_M, pose_M]``,
2. per-image linear least squares for the SH lighting, then one coupled
   linear solve for the shared texture, on colours sampled at visible
   vertices,
3. the full dense loss over the collection, kept only if it did not go up.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import Delaunay

from .basis import LIP_SLICE, MorphableBasis
from .dataset import Collection
from .landmarks import loss_weights
from .losses import LossBreakdown, LossWeights, total_loss
from .render import CoefficientSet, posed_geometry, rasterize_fragments
from .scene import (
    Camera,
    Pose,
    NEAR_EPS,
    N_SH,
    rotation_derivatives,
    rotation_matrix,
    sh_basis,
    vertex_normals,
    white_gamma,
)
from .standardize import default_pose

log = logging.getLogger(__name__)

# observed channels at or above this are treated as clipped
SATURATED = 1.0 - 0.5 / 255


class FitError(RuntimeError):
    pass


class SingularSystemError(FitError):
    pass


@dataclass
class FitConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lip_weight: float = 10.0
    outer_iterations: int = 4
    gn_iterations: int = 40
    damping: float = 1e-3
    tolerance: float = 1e-6
    seed: int = 0
    fit_pose: bool = True
    frozen_pose: Pose | None = None
    photo_samples: int = 1500
    max_damping_retries: int = 10
    gamma_ridge: float = 1e-3
    appearance_sweeps: int = 20
    irls_floor: float = 1e-3  # colour distance below which reweighting saturates

    def __post_init__(self):
        if self.outer_iterations < 0 or self.gn_iterations < 1:
            raise ValueError("iteration counts must be positive")
        if not self.damping > 0:
            raise ValueError("damping must be > 0")


@dataclass
class ImageEstimate:
    beta: np.ndarray
    pose: Pose
    gamma: np.ndarray


@dataclass
class CollectionEstimate:
    alpha_shared: np.ndarray
    delta_shared: np.ndarray
    per_image: list[ImageEstimate]
    names: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.per_image)

    def coefficients(self, i: int) -> CoefficientSet:
        im = self.per_image[i]
        return CoefficientSet(
            self.alpha_shared, im.beta, self.delta_shared, im.gamma,
            Pose(im.pose.euler.copy(), im.pose.translation.copy()),
        )

    def all_coefficients(self) -> list[CoefficientSet]:
        return [self.coefficients(i) for i in range(len(self))]

    def copy(self) -> "CollectionEstimate":
        return CollectionEstimate(
            self.alpha_shared.copy(),
            self.delta_shared.copy(),
            [ImageEstimate(p.beta.copy(), Pose(p.pose.euler.copy(), p.pose.translation.copy()), p.gamma.copy())
             for p in self.per_image],
            list(self.names),
        )


@dataclass
class TraceEntry:
    iteration: int
    total: float
    photometric: float
    landmark: float
    regularization: float


@dataclass
class FitResult:
    estimate: CollectionEstimate
    trace: list[TraceEntry]
    status: str


@dataclass
class Observation:
    image: np.ndarray
    landmarks: np.ndarray
    skin: np.ndarray | None = None
    name: str = ""


# ---------------------------------------------------------------------------
# landmark geometry and its Jacobian
# ---------------------------------------------------------------------------


class LandmarkModel:
    """Landmark rows of the shape bases, cached for repeated evaluation."""

    def __init__(self, basis: MorphableBasis, cam: Camera):
        idx = basis.landmark_indices
        rows = (3 * idx[:, None] + np.arange(3)).ravel()
        n = len(idx)
        self.n = n
        self.cam = cam
        self.mean = basis.mean_shape[rows].reshape(n, 3)
        self.b_id = basis.basis_id[rows].reshape(n, 3, -1)
        self.b_exp = basis.basis_exp[rows].reshape(n, 3, -1)

    def points(self, alpha, beta) -> np.ndarray:
        return self.mean + self.b_id @ alpha + self.b_exp @ beta

    def project(self, alpha, beta, pose: Pose):
        """Pixel positions (N x 2) and camera-frame points (N x 3)."""
        x = self.points(alpha, beta) @ rotation_matrix(pose).T + pose.translation
        z = x[:, 2]
        f = self.cam.focal
        cx, cy = self.cam.principal_point
        uv = np.stack([-f * x[:, 0] / z + cx, f * x[:, 1] / z + cy], axis=1)
        return uv, x

    def jacobian(self, alpha, beta, pose: Pose):
        """d(uv)/d(alpha, beta, pose) as three (2N x D) blocks."""
        s = self.points(alpha, beta)
        r = rotation_matrix(pose)
        x = s @ r.T + pose.translation
        f = self.cam.focal
        z = x[:, 2]
        proj = np.zeros((self.n, 2, 3))
        proj[:, 0, 0] = -f / z
        proj[:, 0, 2] = f * x[:, 0] / z**2
        proj[:, 1, 1] = f / z
        proj[:, 1, 2] = -f * x[:, 1] / z**2
        pr = proj @ r  # N x 2 x 3
        j_alpha = (pr @ self.b_id).reshape(2 * self.n, -1)
        j_beta = (pr @ self.b_exp).reshape(2 * self.n, -1)
        dr = rotation_derivatives(pose)  # 3 x 3 x 3
        d_rot = np.einsum("kab,nb->nak", dr, s)  # N x 3 x 3(angle)
        j_pose = np.concatenate([proj @ d_rot, proj], axis=2).reshape(2 * self.n, 6)
        return j_alpha, j_beta, j_pose


def landmark_jacobian(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera) -> np.ndarray:
    """Full d(landmark uv)/d(alpha, beta, euler, translation), shape 2N x D."""
    model = LandmarkModel(basis, cam)
    return np.concatenate(model.jacobian(coeffs.alpha, coeffs.beta, coeffs.pose), axis=1)


def landmark_uv(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera) -> np.ndarray:
    return LandmarkModel(basis, cam).project(coeffs.alpha, coeffs.beta, coeffs.pose)[0]


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def procrustes_pose(model: LandmarkModel, detected: np.ndarray, weights=None) -> Pose:
    """Closed-form 2D similarity from mean-shape landmarks to detections,
    lifted to a frontal-ish 3D pose (roll, translation, depth from scale)."""
    cam = model.cam
    cx, cy = cam.principal_point
    w = np.ones(model.n) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    q = model.mean[:, :2]
    p = np.stack([detected[:, 0] - cx, -(detected[:, 1] - cy)], axis=1)
    qm, pm = w @ q, w @ p
    qc, pc = q - qm, p - pm
    cov = (pc * w[:, None]).T @ qc
    u, sv, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ np.diag([1.0, d]) @ vt
    scale = (sv[0] + d * sv[1]) / float(w @ np.sum(qc**2, axis=1))
    roll = float(np.arctan2(rot[1, 0], rot[0, 0]))
    b = pm - scale * rot @ qm
    depth = cam.focal / scale
    z_mean = float(w @ model.mean[:, 2])
    return Pose(np.array([0.0, 0.0, roll]), np.array([b[0] / scale, b[1] / scale, -depth - z_mean]))


def initial_gamma(basis: MorphableBasis, image: np.ndarray, detected: np.ndarray) -> np.ndarray:
    """DC-white light matching mean image colour inside the landmark hull."""
    h, w = image.shape[:2]
    try:
        hull = Delaunay(detected)
        ys, xs = np.mgrid[0:h, 0:w]
        centres = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
        inside = hull.find_simplex(centres) >= 0
    except Exception:  # degenerate landmark layout
        inside = np.zeros(h * w, dtype=bool)
    pixels = image.reshape(-1, 3)[inside] if inside.any() else image.reshape(-1, 3)
    mean_obs = pixels.mean(axis=0)
    mean_tex = basis.mean_texture.reshape(-1, 3).mean(axis=0)
    g = np.zeros((3, N_SH))
    for ch in range(3):
        g[ch] = white_gamma(mean_obs[ch] / mean_tex[ch]).reshape(3, N_SH)[ch]
    return g.ravel()


# ---------------------------------------------------------------------------
# geometry stage
# ---------------------------------------------------------------------------


class _Geometry:
    """Stacked variable ``[alpha, (beta_i, pose_i)_i]`` and its objective."""

    def __init__(self, model: LandmarkModel, detected, lmk_weights, cfg: FitConfig, fit_pose: bool):
        self.model = model
        self.detected = [np.asarray(d, dtype=np.float64) for d in detected]
        self.m = len(detected)
        self.d_id = model.b_id.shape[2]
        self.d_exp = model.b_exp.shape[2]
        self.fit_pose = fit_pose
        self.block = self.d_exp + (6 if fit_pose else 0)
        w = cfg.weights
        self.lan_w = w.lambda_lan * np.asarray(lmk_weights, dtype=np.float64) / model.n
        self.reg = np.zeros(self.d_id + self.m * self.block)
        self.reg[: self.d_id] = w.lambda_reg * w.omega_alpha * self.m
        for i in range(self.m):
            o = self.d_id + i * self.block
            self.reg[o : o + self.d_exp] = w.lambda_reg * w.omega_beta

    def pack(self, alpha, images) -> np.ndarray:
        parts = [alpha]
        for im in images:
            parts.append(im.beta)
            if self.fit_pose:
                parts.append(im.pose.as_vector())
        return np.concatenate(parts)

    def unpack(self, theta, poses):
        alpha = theta[: self.d_id]
        out = []
        for i in range(self.m):
            o = self.d_id + i * self.block
            beta = theta[o : o + self.d_exp]
            pose = Pose.from_vector(theta[o + self.d_exp : o + self.block]) if self.fit_pose else poses[i]
            out.append((beta, pose))
        return alpha, out

    def residuals(self, theta, poses):
        """Per-image landmark offsets (N x 2), or None if any point is behind the camera."""
        alpha, per = self.unpack(theta, poses)
        res = []
        for (beta, pose), det in zip(per, self.detected):
            uv, x = self.model.project(alpha, beta, pose)
            if np.any(-x[:, 2] <= NEAR_EPS):
                return None
            res.append(uv - det)
        return res

    def objective(self, theta, poses) -> float:
        res = self.residuals(theta, poses)
        if res is None:
            return np.inf
        lan = sum(float(self.lan_w @ np.sum(r**2, axis=1)) for r in res)
        return lan + float(theta @ (self.reg * theta))

    def normal_equations(self, theta, poses):
        alpha, per = self.unpack(theta, poses)
        n2 = 2 * self.model.n
        sw = np.repeat(np.sqrt(self.lan_w), 2)
        h = np.diag(self.reg)
        g = self.reg * theta
        for i, ((beta, pose), det) in enumerate(zip(per, self.detected)):
            ja, jb, jp = self.model.jacobian(alpha, beta, pose)
            uv, _ = self.model.project(alpha, beta, pose)
            j = np.zeros((n2, theta.size))
            j[:, : self.d_id] = ja
            o = self.d_id + i * self.block
            j[:, o : o + self.d_exp] = jb
            if self.fit_pose:
                j[:, o + self.d_exp : o + self.block] = jp
            j *= sw[:, None]
            h += j.T @ j
            g += j.T @ (sw * (uv - det).ravel())
        return h, g


def _solve_damped(h, g, mu, cfg: FitConfig):
    eye = np.eye(len(g))
    for _ in range(cfg.max_damping_retries):
        try:
            step = np.linalg.solve(h + mu * eye, -g)
            if np.all(np.isfinite(step)):
                return step, mu
        except np.linalg.LinAlgError:
            pass
        mu *= 10.0
    raise SingularSystemError("normal equations stayed singular after damping escalation")


def fit_geometry(model: LandmarkModel, est: CollectionEstimate, detected, lmk_weights, cfg: FitConfig,
                 fit_pose: bool = True):
    """Levenberg-damped Gauss-Newton on landmarks + Gaussian priors (in place).

    Returns the list of accepted objective values.
    """
    geo = _Geometry(model, detected, lmk_weights, cfg, fit_pose)
    poses = [im.pose for im in est.per_image]
    theta = geo.pack(est.alpha_shared, est.per_image)
    f = geo.objective(theta, poses)
    if not np.isfinite(f):
        raise FitError("initial pose puts landmarks behind the camera")
    history = [f]
    mu = cfg.damping
    rejects = 0
    for _ in range(cfg.gn_iterations):
        h, g = geo.normal_equations(theta, poses)
        step, mu = _solve_damped(h, g, mu, cfg)
        cand = theta + step
        f_new = geo.objective(cand, poses)
        if f_new < f:
            rel = (f - f_new) / max(f, 1e-300)
            theta, f = cand, f_new
            history.append(f)
            mu = max(mu / 10.0, 1e-12)
            rejects = 0
            if rel < cfg.tolerance:
                break
        else:
            mu *= 10.0
            rejects += 1
            if rejects >= 3:
                break
    alpha, per = geo.unpack(theta, poses)
    est.alpha_shared = alpha.copy()
    for im, (beta, pose) in zip(est.per_image, per):
        im.beta = beta.copy()
        im.pose = Pose(pose.euler.copy(), pose.translation.copy())
    return history


# ---------------------------------------------------------------------------
# texture / illumination stage
# ---------------------------------------------------------------------------


@dataclass
class PhotoSamples:
    """Observed colours at visible vertices of one image."""

    vertices: np.ndarray  # S
    normals: np.ndarray  # S x 3 (camera frame)
    colors: np.ndarray  # S x 3
    weights: np.ndarray  # S, already include lambda_pho * A / S


def _bilinear(img, u, v):
    h, w = img.shape[:2]
    x = np.clip(u - 0.5, 0, w - 1)
    y = np.clip(v - 0.5, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), w - 2)
    y0 = np.minimum(np.floor(y).astype(int), h - 2)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx, fy = fx[:, None], fy[:, None]
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def _footprint(u, v, w, h):
    """Top-left pixel of the 2 x 2 bilinear footprint around (u, v)."""
    x0 = np.clip(np.floor(u - 0.5).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(v - 0.5).astype(int), 0, h - 2)
    return x0, y0


def photo_samples(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera, obs: Observation,
                  cfg: FitConfig, min_cos: float = 0.2, depth_tol: float = 0.02) -> PhotoSamples:
    """Colours at vertices that the current estimate shows unoccluded.

    A vertex is kept when it faces the camera, its whole bilinear footprint
    is covered by the current render, it is not hidden behind another
    surface, and the observed colour is not saturated.
    """
    _, posed, uv, depth, valid = posed_geometry(basis, coeffs, cam)
    normals = vertex_normals(posed, basis.triangles).reshape(-1, 3)
    pts = posed.reshape(-1, 3)
    view = -pts / np.linalg.norm(pts, axis=1, keepdims=True)
    w, h = cam.width, cam.height
    with np.errstate(invalid="ignore"):
        keep = valid & (np.sum(normals * view, axis=1) > min_cos)
        keep &= (uv[:, 0] >= 1) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 1) & (uv[:, 1] <= h - 1)
    cand = np.flatnonzero(keep)
    if cand.size:
        cover = rasterize_fragments(uv, depth, basis.triangles, w, h)
        zbuf = np.full(h * w, np.inf)
        zbuf[cover.pixel] = cover.depth
        zbuf = zbuf.reshape(h, w)
        x0, y0 = _footprint(uv[cand, 0], uv[cand, 1], w, h)
        foot = np.stack([zbuf[y0, x0], zbuf[y0, x0 + 1], zbuf[y0 + 1, x0], zbuf[y0 + 1, x0 + 1]], axis=1)
        near = np.all(np.isfinite(foot), axis=1) & (depth[cand] <= foot.min(axis=1) + depth_tol)
        cand = cand[near]
    if cand.size:
        colors = _bilinear(obs.image, uv[cand, 0], uv[cand, 1])
        x0, y0 = _footprint(uv[cand, 0], uv[cand, 1], w, h)
        img = obs.image
        foot = np.stack([img[y0, x0], img[y0, x0 + 1], img[y0 + 1, x0], img[y0 + 1, x0 + 1]], axis=1)
        unsat = np.all(foot < SATURATED, axis=(1, 2))
        cand = cand[unsat]
    if cand.size > cfg.photo_samples:
        cand = cand[np.linspace(0, cand.size - 1, cfg.photo_samples).round().astype(int)]
    if cand.size == 0:
        raise FitError(f"no visible vertices to sample in image {obs.name!r}")
    colors = _bilinear(obs.image, uv[cand, 0], uv[cand, 1])
    skin = np.ones(cand.size) if obs.skin is None else _bilinear(obs.skin, uv[cand, 0], uv[cand, 1])
    wts = cfg.weights.lambda_pho * skin / cand.size
    return PhotoSamples(cand, normals[cand], colors, wts)


def gamma_system(texture: np.ndarray, s: PhotoSamples):
    """Weighted design matrices for the per-channel lighting solve.

    Returns a list of (A_c, b_c) with rows scaled by sqrt(weight).
    """
    phi = sh_basis(s.normals)
    t = texture.reshape(-1, 3)[s.vertices]
    sw = np.sqrt(s.weights)
    return [((t[:, c : c + 1] * phi) * sw[:, None], s.colors[:, c] * sw) for c in range(3)]


def solve_gamma(texture: np.ndarray, s: PhotoSamples, ridge: float = 0.0) -> np.ndarray:
    """Least-squares SH coefficients (27,) given per-vertex albedo.

    ``ridge`` damps the eight non-constant coefficients; over a face seen
    from the front the constant, z and 3z^2-1 terms are nearly collinear.
    """
    g = np.zeros((3, N_SH))
    damp = np.sqrt(ridge) * np.eye(N_SH)[1:]
    for c, (a, b) in enumerate(gamma_system(texture, s)):
        g[c] = np.linalg.lstsq(np.vstack([a, damp]), np.r_[b, np.zeros(N_SH - 1)], rcond=None)[0]
    return g.ravel()


def delta_system(basis: MorphableBasis, gammas, samples):
    """Stacked weighted rows for the shared-texture solve."""
    mats = []
    rhs = []
    b_tex = basis.basis_tex
    for gamma, s in zip(gammas, samples):
        irr = sh_basis(s.normals) @ np.asarray(gamma).reshape(3, N_SH).T  # S x 3
        rows = (3 * s.vertices[:, None] + np.arange(3)).ravel()
        sw = np.repeat(np.sqrt(s.weights), 3)
        e = irr.ravel()
        mats.append((sw * e)[:, None] * b_tex[rows])
        rhs.append(sw * (s.colors.ravel() - e * basis.mean_texture[rows]))
    return np.concatenate(mats), np.concatenate(rhs)


def solve_delta(basis: MorphableBasis, gammas, samples, ridge: float) -> np.ndarray:
    """Shared texture coefficients minimising ||A d - b||^2 + ridge ||d||^2."""
    a, b = delta_system(basis, gammas, samples)
    d = a.shape[1]
    if d == 0:
        return np.zeros(0)
    gram = a.T @ a + ridge * np.eye(d)
    rhs = a.T @ b
    try:
        return cho_solve(cho_factor(gram), rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def _reweighted(basis, texture_delta, gamma, s: PhotoSamples, floor: float) -> PhotoSamples:
    """Majorise the unsquared colour distance at the current fit.

    ||r|| <= ||r||^2 / (2 ||r0||) + ||r0|| / 2, so minimising the weighted
    squares with weights w / (2 ||r0||) never increases the true loss.
    """
    texture = (basis.mean_texture + basis.basis_tex @ texture_delta).reshape(-1, 3)[s.vertices]
    pred = texture * (sh_basis(s.normals) @ np.asarray(gamma).reshape(3, N_SH).T)
    r = np.linalg.norm(pred - s.colors, axis=1)
    return replace(s, weights=s.weights / (2.0 * np.maximum(r, floor)))


def fit_appearance(basis: MorphableBasis, est: CollectionEstimate, cam: Camera, observations, cfg: FitConfig):
    """Alternate lighting per image (given texture) and shared texture (given lighting).

    Each sweep reweights the samples so the squared solves descend on the
    unsquared photometric distance.
    """
    coeffs = est.all_coefficients()
    samples = [photo_samples(basis, c, cam, o, cfg) for c, o in zip(coeffs, observations)]
    w = cfg.weights
    ridge = w.lambda_reg * w.omega_delta * len(samples)
    for _ in range(cfg.appearance_sweeps):
        texture = basis.mean_texture + basis.basis_tex @ est.delta_shared
        for i, (im, s) in enumerate(zip(est.per_image, samples)):
            sw = _reweighted(basis, est.delta_shared, im.gamma, s, cfg.irls_floor)
            im.gamma = solve_gamma(texture, sw, cfg.gamma_ridge)
        rw = [_reweighted(basis, est.delta_shared, im.gamma, s, cfg.irls_floor) for im, s in zip(est.per_image, samples)]
        est.delta_shared = solve_delta(basis, [im.gamma for im in est.per_image], rw, ridge)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def collection_loss(basis, est: CollectionEstimate, cam, observations, cfg: FitConfig, lmk_weights) -> LossBreakdown:
    parts = []
    for i, obs in enumerate(observations):
        c = est.coefficients(i)
        parts.append(total_loss(obs.image, obs.landmarks, basis, c, cam, obs.skin, cfg.weights, lmk_weights))
    return LossBreakdown(*(float(np.mean([getattr(p, k) for p in parts]))
                           for k in ("total", "photometric", "landmark", "regularization")))


def initialize(basis: MorphableBasis, model: LandmarkModel, observations, cfg: FitConfig, cam: Camera) -> CollectionEstimate:
    d_id, d_exp, d_tex = basis.dims
    per = []
    for obs in observations:
        if cfg.fit_pose:
            pose = procrustes_pose(model, obs.landmarks)
        else:
            pose = cfg.frozen_pose or default_pose(basis, cam)
            pose = Pose(pose.euler.copy(), pose.translation.copy())
        per.append(ImageEstimate(np.zeros(d_exp), pose, initial_gamma(basis, obs.image, obs.landmarks)))
    return CollectionEstimate(np.zeros(d_id), np.zeros(d_tex), per, [o.name for o in observations])


def fit_observations(basis: MorphableBasis, observations, cam: Camera, cfg: FitConfig | None = None) -> FitResult:
    """Fit one collection given in-memory observations."""
    cfg = cfg or FitConfig()
    observations = list(observations)
    if not observations:
        raise FitError("empty collection")
    model = LandmarkModel(basis, cam)
    lmk_w = loss_weights(model.n, LIP_SLICE, cfg.lip_weight)
    est = initialize(basis, model, observations, cfg, cam)
    loss = collection_loss(basis, est, cam, observations, cfg, lmk_w)
    trace = [TraceEntry(0, loss.total, loss.photometric, loss.landmark, loss.regularization)]
    status = "max_iterations"
    if cfg.outer_iterations == 0:
        status = "not_run"
    for it in range(1, cfg.outer_iterations + 1):
        cand = est.copy()
        fit_geometry(model, cand, [o.landmarks for o in observations], lmk_w, cfg, cfg.fit_pose)
        fit_appearance(basis, cand, cam, observations, cfg)
        loss = collection_loss(basis, cand, cam, observations, cfg, lmk_w)
        prev = trace[-1].total
        log.debug("outer %d: loss %.6g -> %.6g", it, prev, loss.total)
        if not loss.total <= prev:
            status = "stalled"
            break
        est = cand
        trace.append(TraceEntry(it, loss.total, loss.photometric, loss.landmark, loss.regularization))
        if (prev - loss.total) <= cfg.tolerance * prev:
            status = "converged"
            break
    return FitResult(est, trace, status)


def load_observations(collection: Collection) -> list[Observation]:
    out = []
    for item in collection.items:
        img, lmk, skin = item.load()
        out.append(Observation(img, lmk, skin, item.name))
    return out


def fit_collection(basis: MorphableBasis, collection: Collection, cam: Camera, cfg: FitConfig | None = None) -> FitResult:
    """Jointly fit a collection with shared identity and texture."""
    if not collection.items:
        raise FitError(f"collection {collection.id!r} is empty")
    return fit_observations(basis, load_observations(collection), cam, cfg)


def fit_per_image_observations(basis, observations, cam, cfg=None) -> list[FitResult]:
    return [fit_observations(basis, [o], cam, cfg) for o in observations]


def fit_per_image(basis: MorphableBasis, collection: Collection, cam: Camera, cfg: FitConfig | None = None) -> list[CoefficientSet]:
    """Unconstrained baseline: every image gets its own identity and texture."""
    results = fit_per_image_observations(basis, load_observations(collection), cam, cfg)
    return [r.estimate.coefficients(0) for r in results]


ATTRIBUTES = ("alpha", "beta", "delta", "gamma", "pose")


def form_mixed_coefficients(gt: CoefficientSet, est: CoefficientSet, take_from_est) -> CoefficientSet:
    """Copy the selected attributes from ``est`` and the rest from ``gt``."""
    take = set(take_from_est)
    unknown = take - set(ATTRIBUTES)
    if unknown:
        raise ValueError(f"unknown attribute(s) {sorted(unknown)}")
    for name in ("alpha", "beta", "delta", "gamma"):
        if getattr(gt, name).shape != getattr(est, name).shape:
            raise ValueError(f"dimension mismatch in {name}")
    src = {k: (est if k in take else gt) for k in ATTRIBUTES}
    pose = src["pose"].pose
    return CoefficientSet(
        src["alpha"].alpha.copy(), src["beta"].beta.copy(), src["delta"].delta.copy(),
        src["gamma"].gamma.copy(), Pose(pose.euler.copy(), pose.translation.copy()),
    )
