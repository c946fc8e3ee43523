"""Landmark reprojection, weighted landmark distance and group LMD."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import LIP_SLICE, N_LANDMARKS, MorphableBasis
from .render import CoefficientSet, posed_geometry
from .scene import Camera

LIP_WEIGHT = 10.0
INVALID_PENALTY_PX = 1e4


@dataclass
class Reprojection:
    points: np.ndarray  # N x 2, NaN rows where invalid
    valid: np.ndarray  # N bool


def reproject_landmarks(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera) -> Reprojection:
    _, _, uv, _, valid = posed_geometry(basis, coeffs, cam)
    idx = basis.landmark_indices
    return Reprojection(uv[idx], valid[idx])


def loss_weights(n: int = N_LANDMARKS, lip: slice | np.ndarray = LIP_SLICE, lip_weight: float = LIP_WEIGHT) -> np.ndarray:
    """Per-landmark weights for the fitting loss: lips 10, everything else 1."""
    w = np.ones(n)
    w[lip] = lip_weight
    return w


def lip_metric_weights(n: int = N_LANDMARKS, lip: slice | np.ndarray = LIP_SLICE) -> np.ndarray:
    """Weights for the LMD metric: uniform over lip landmarks, zero elsewhere."""
    w = np.zeros(n)
    w[lip] = 1.0
    return w


def landmark_distances(detected, reprojected, valid=None, penalty: float = INVALID_PENALTY_PX) -> np.ndarray:
    a = np.asarray(detected, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(reprojected, dtype=np.float64).reshape(-1, 2)
    if a.shape != b.shape:
        raise ValueError(f"landmark count mismatch: {len(a)} vs {len(b)}")
    d = np.sqrt(np.sum((a - b) ** 2, axis=1))
    bad = ~np.isfinite(d)
    if valid is not None:
        bad |= ~np.asarray(valid, dtype=bool)
    d[bad] = penalty
    return d


def lmd(detected, reprojected, weights=None, valid=None, penalty: float = INVALID_PENALTY_PX) -> float:
    """(1/N) * sum_n w_n * ||l_n - l'_n||.

    Landmarks flagged invalid (behind the camera) count as ``penalty`` pixels.
    """
    d = landmark_distances(detected, reprojected, valid, penalty)
    w = np.ones(len(d)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != d.shape:
        raise ValueError("weights length must equal the landmark count")
    return float(np.sum(w * d) / len(d))


def lip_lmd(detected, reprojected, lip: slice | np.ndarray = LIP_SLICE, valid=None) -> float:
    """Evaluation metric: mean unweighted distance over the lip landmarks."""
    a = np.asarray(detected, dtype=np.float64).reshape(-1, 2)[lip]
    b = np.asarray(reprojected, dtype=np.float64).reshape(-1, 2)[lip]
    v = None if valid is None else np.asarray(valid)[lip]
    return lmd(a, b, None, v)


def collection_lmd(values) -> float:
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty collection")
    return float(vals.mean())


def group_lmd(collections) -> float:
    """Mean of collection LMDs, each the mean of its per-datum LMDs."""
    collections = list(collections)
    if not collections:
        raise ValueError("empty group")
    return float(np.mean([collection_lmd(c) for c in collections]))


@dataclass
class GroupLMDSummary:
    per_group: list[float]
    min: float
    max: float
    avg: float


def summarize_groups(groups) -> GroupLMDSummary:
    """Group LMDs over several groups plus their min / max / average."""
    per = [group_lmd(g) for g in groups]
    if not per:
        raise ValueError("no groups")
    return GroupLMDSummary(per, float(min(per)), float(max(per)), float(np.mean(per)))


def write_landmarks(points, path) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    Path(path).write_text("".join(f"{u!r} {v!r}\n" for u, v in pts.tolist()))


def read_landmarks(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'u v'")
        rows.append((float(parts[0]), float(parts[1])))
    pts = np.array(rows, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite landmark coordinates")
    return pts
