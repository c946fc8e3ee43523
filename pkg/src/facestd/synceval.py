"""Lip-sync offset search and active-speaker scoring over feature streams.

Offsets follow one convention throughout: offset ``o`` pairs visual frame
``t + o`` with audio frame ``t``, so a positive offset means the visual
stream lags the audio.  Active-speaker scores are similarities, higher
meaning more likely in sync.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 15
DEFAULT_SMOOTHING = 15
DEFAULT_FRAME_RATE = 25.0
TIE_TOL = 1e-12


class SyncError(ValueError):
    pass


@dataclass
class FeatureStream:
    frames: np.ndarray  # T x D
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise SyncError(f"feature stream must be T x D with T, D >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise SyncError("feature stream has non-finite values")
        if not self.frame_rate > 0:
            raise SyncError("frame rate must be positive")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def write_stream(stream: FeatureStream, path) -> None:
    lines = [f"{len(stream)} {stream.dim} {stream.frame_rate!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in stream.frames]
    Path(path).write_text("\n".join(lines) + "\n")


def read_stream(path) -> FeatureStream:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 3:
        raise SyncError(f"{path}: header must be 'T D frame_rate'")
    t, d, rate = int(head[0]), int(head[1]), float(head[2])
    rows = [ln.split() for ln in text[1:] if ln.strip()]
    if len(rows) != t or any(len(r) != d for r in rows):
        raise SyncError(f"{path}: expected {t} rows of {d} values")
    return FeatureStream(np.array(rows, dtype=np.float64).reshape(t, d), rate)


# ---------------------------------------------------------------------------
# similarity and offsets
# ---------------------------------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SyncError("vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise SyncError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _rowwise_cosine(x, y):
    """Cosine per row; rows with a zero norm give 0 and are counted."""
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    ok = (nx > 0) & (ny > 0)
    out = np.zeros(len(x))
    out[ok] = np.clip(np.sum(x[ok] * y[ok], axis=1) / (nx[ok] * ny[ok]), -1.0, 1.0)
    return out, int(np.count_nonzero(~ok))


@dataclass
class OffsetResult:
    offset: int
    offsets: np.ndarray  # candidate offsets, -window..window
    profile: np.ndarray  # mean similarity per offset (nan where excluded)
    boundary: bool  # best offset sits on the window edge


def determine_offset(visual: FeatureStream, audio: FeatureStream, window: int = DEFAULT_WINDOW) -> OffsetResult:
    """Offset in [-window, window] with the highest mean aligned similarity.

    Ties go to the smallest |offset|, then to the negative one. Profile
    values within ``TIE_TOL`` of the best count as tied, since means over
    different pair counts differ in the last bits even for equal similarities.
    """
    if window < 1:
        raise SyncError("window must be >= 1")
    if visual.dim != audio.dim:
        raise SyncError("visual and audio feature dimensions differ")
    v, a = visual.frames, audio.frames
    offsets = np.arange(-window, window + 1)
    profile = np.full(offsets.size, np.nan)
    for k, o in enumerate(offsets):
        t0 = max(0, -o)
        t1 = min(len(a), len(v) - o)
        if t1 <= t0:
            continue
        sims, zero = _rowwise_cosine(v[t0 + o : t1 + o], a[t0:t1])
        valid = t1 - t0 - zero
        if valid == 0:
            continue
        # zero-norm pairs are not valid pairs
        profile[k] = sims.sum() / valid
    if np.all(np.isnan(profile)):
        raise SyncError("no offset in the window has overlapping valid frames")
    best = np.nanmax(profile)
    cands = offsets[profile >= best - TIE_TOL]
    o = int(min(cands, key=lambda x: (abs(x), x)))
    return OffsetResult(o, offsets, profile, abs(o) == window)


def offset_accuracy(predicted, ground_truth, tolerance: int = 1) -> float:
    p = np.asarray(predicted)
    g = np.asarray(ground_truth)
    if p.shape != g.shape:
        raise SyncError("predicted and ground-truth offsets differ in length")
    if p.size == 0:
        raise SyncError("no offsets to score")
    return float(np.mean(np.abs(p - g) <= tolerance))


def moving_average(x, width: int) -> np.ndarray:
    """Centred moving average truncated at the edges.

    Frame t averages indices [t - (w-1)//2, t + w//2] clipped to the stream.
    """
    if width < 1:
        raise SyncError("smoothing must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    c = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(n)
    lo = np.maximum(t - (width - 1) // 2, 0)
    hi = np.minimum(t + width // 2, n - 1) + 1
    return (c[hi] - c[lo]) / (hi - lo)


@dataclass
class ASDScores:
    scores: np.ndarray
    zero_norm_frames: int


def asd_scores(visual: FeatureStream, audio: FeatureStream, smoothing: int = DEFAULT_SMOOTHING) -> ASDScores:
    if visual.dim != audio.dim:
        raise SyncError("visual and audio feature dimensions differ")
    n = min(len(visual), len(audio))
    sims, zero = _rowwise_cosine(visual.frames[:n], audio.frames[:n])
    if zero:
        log.warning("%d frame(s) with zero-norm features scored as 0", zero)
    return ASDScores(moving_average(sims, smoothing), zero)


# ---------------------------------------------------------------------------
# track classification metrics
# ---------------------------------------------------------------------------


@dataclass
class ScoredTrack:
    scores: np.ndarray
    active: bool

    def __post_init__(self):
        self.scores = np.atleast_1d(np.asarray(self.scores, dtype=np.float64))
        if self.scores.size == 0 or not np.all(np.isfinite(self.scores)):
            raise SyncError("track scores must be non-empty and finite")

    @property
    def score(self) -> float:
        return float(np.mean(self.scores))


@dataclass
class Curves:
    thresholds: np.ndarray  # descending; first entry +inf
    tpr: np.ndarray
    fpr: np.ndarray
    precision: np.ndarray


@dataclass
class Metrics:
    ap: float
    auroc: float
    eer: float
    curves: Curves


def _curves(scores, labels) -> Curves:
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every group of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = (last + 1) - tp
    pos, neg = y.sum(), (~y).sum()
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    prec = np.r_[1.0, tp / (tp + fp)]
    return Curves(np.r_[np.inf, s[last]], tpr, fpr, prec)


def classification_metrics(tracks) -> Metrics:
    """AP, AUROC and EER over per-track mean scores (higher = active)."""
    tracks = list(tracks)
    labels = np.array([t.active for t in tracks], dtype=bool)
    if labels.all() or not labels.any():
        raise SyncError("metrics need at least one active and one inactive track")
    scores = np.array([t.score for t in tracks])
    cur = _curves(scores, labels)
    ap = float(np.sum(np.diff(cur.tpr) * cur.precision[1:]))

    pos, neg = scores[labels], scores[~labels]
    diff = pos[:, None] - neg[None, :]
    auroc = float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / diff.size)

    far = cur.fpr
    frr = 1.0 - cur.tpr
    d = far - frr
    k = int(np.argmax(d >= 0))  # d runs from -1 up to +1
    if d[k] == 0 or k == 0:
        eer = float(far[k])
    else:
        x = -d[k - 1] / (d[k] - d[k - 1])
        eer = float(far[k - 1] + x * (far[k] - far[k - 1]))
    return Metrics(ap, auroc, eer, cur)


def write_metrics(m: Metrics, report_path, curves_path=None) -> None:
    Path(report_path).write_text(f"ap={m.ap!r}\nauroc={m.auroc!r}\neer={m.eer!r}\n")
    if curves_path is not None:
        c = m.curves
        rows = ["threshold,tpr,fpr,precision"]
        rows += [",".join(repr(float(x)) for x in row) for row in zip(c.thresholds, c.tpr, c.fpr, c.precision)]
        Path(curves_path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# toy features for end-to-end runs without a learned front end
# ---------------------------------------------------------------------------


def lip_features(depth_frames, lip_points) -> FeatureStream:
    """Per-frame lip descriptor from standardised pseudo-depth images.

    Samples depth at the lip landmark pixels and subtracts the stream mean,
    so the feature encodes mouth motion rather than the static face.
    """
    feats = []
    for depth, pts in zip(depth_frames, lip_points):
        h, w = depth.shape
        x = np.clip(np.floor(pts[:, 0]).astype(int), 0, w - 1)
        y = np.clip(np.floor(pts[:, 1]).astype(int), 0, h - 1)
        feats.append(np.r_[depth[y, x], pts.ravel() / max(h, w)])
    f = np.asarray(feats)
    return FeatureStream(f - f.mean(axis=0))


def synthetic_audio(visual: FeatureStream, lag: int, noise: float = 0.0, rng=None) -> FeatureStream:
    """Audio stream such that ``determine_offset(visual, audio)`` should be ``lag``.

    audio[t] = visual[t + lag] (edge-padded) plus optional Gaussian noise.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    v = visual.frames
    idx = np.clip(np.arange(len(v)) + lag, 0, len(v) - 1)
    a = v[idx].copy()
    if noise > 0:
        a += noise * rng.normal(size=a.shape)
    return FeatureStream(a, visual.frame_rate)
