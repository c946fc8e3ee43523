"""Photometric, landmark and regularisation losses and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import MorphableBasis
from .landmarks import loss_weights, lmd, reproject_landmarks
from .render import CoefficientSet, RenderedImage, render
from .scene import Camera


class UndefinedLossError(ValueError):
    pass


@dataclass
class LossWeights:
    lambda_pho: float = 1.92
    lambda_lan: float = 1.6e-3
    lambda_reg: float = 3.0e-4
    omega_alpha: float = 0.5
    omega_beta: float = 2.0
    omega_delta: float = 0.5

    def __post_init__(self):
        for k, v in vars(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")


@dataclass
class LossBreakdown:
    total: float
    photometric: float
    landmark: float
    regularization: float


def photometric_loss(observed: np.ndarray, rendered: RenderedImage, skin: np.ndarray | None = None) -> float:
    """Skin-weighted mean of per-pixel RGB residual norms over rendered coverage."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.shape != rendered.rgb.shape:
        raise ValueError(f"image shape mismatch: {obs.shape} vs {rendered.rgb.shape}")
    m = rendered.mask
    if not m.any():
        raise UndefinedLossError("rendered coverage mask is empty")
    a = np.ones(m.shape) if skin is None else np.asarray(skin, dtype=np.float64)
    if a.shape != m.shape:
        raise ValueError("skin mask shape mismatch")
    a = a[m]
    denom = a.sum()
    if not denom > 0:
        raise UndefinedLossError("skin weights vanish on the coverage mask")
    resid = np.sqrt(np.sum((obs[m] - rendered.rgb[m]) ** 2, axis=1))
    return float(np.sum(a * resid) / denom)


def regularization_loss(coeffs: CoefficientSet, w: LossWeights) -> float:
    return float(
        w.omega_alpha * np.dot(coeffs.alpha, coeffs.alpha)
        + w.omega_beta * np.dot(coeffs.beta, coeffs.beta)
        + w.omega_delta * np.dot(coeffs.delta, coeffs.delta)
    )


def total_loss(
    observed,
    landmarks_detected,
    basis: MorphableBasis,
    coeffs: CoefficientSet,
    cam: Camera,
    skin=None,
    w: LossWeights | None = None,
    landmark_weights=None,
    rendered: RenderedImage | None = None,
) -> LossBreakdown:
    """lambda_pho * L_pho + lambda_lan * L_lan + lambda_reg * L_reg."""
    w = w or LossWeights()
    img = rendered if rendered is not None else render(basis, coeffs, cam)
    l_pho = photometric_loss(observed, img, skin)
    rep = reproject_landmarks(basis, coeffs, cam)
    lw = loss_weights(len(rep.points)) if landmark_weights is None else landmark_weights
    l_lan = lmd(landmarks_detected, rep.points, lw, rep.valid)
    l_reg = regularization_loss(coeffs, w)
    total = w.lambda_pho * l_pho + w.lambda_lan * l_lan + w.lambda_reg * l_reg
    return LossBreakdown(float(total), l_pho, l_lan, l_reg)
