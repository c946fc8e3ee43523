"""Software rasterizer: z-buffered, perspective-correct, top-left fill rule.

Pixel (x, y) is sampled at its centre (x + 0.5, y + 0.5). Each edge function
is evaluated with the lower vertex index first and negated when the triangle
traverses the edge the other way, so neighbouring triangles see bit-exact
opposite values and the mesh rasterizes without cracks or double coverage.
Equal depths resolve to the lower triangle index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import MorphableBasis, ShapeCoeffs, TextureCoeffs, assemble_shape, assemble_texture
from .scene import Camera, Pose, project, shade, transform_vertices, vertex_normals, N_GAMMA

# Max (triangle, pixel) candidates materialised at once.
_CHUNK = 2_000_000


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class CoefficientSet:
    """Full per-image parameter vector: alpha, beta, delta, gamma, pose."""

    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        for name in ("alpha", "beta", "delta", "gamma"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        if self.gamma.shape != (N_GAMMA,):
            raise ValueError(f"gamma must have {N_GAMMA} entries")

    @classmethod
    def zeros(cls, basis: MorphableBasis, gamma=None, pose: Pose | None = None) -> "CoefficientSet":
        d_id, d_exp, d_tex = basis.dims
        return cls(
            np.zeros(d_id),
            np.zeros(d_exp),
            np.zeros(d_tex),
            np.zeros(N_GAMMA) if gamma is None else gamma,
            pose if pose is not None else Pose(),
        )

    def copy(self) -> "CoefficientSet":
        return CoefficientSet(
            self.alpha.copy(), self.beta.copy(), self.delta.copy(), self.gamma.copy(),
            Pose(self.pose.euler.copy(), self.pose.translation.copy()),
        )

    def check(self, basis: MorphableBasis) -> None:
        d_id, d_exp, d_tex = basis.dims
        if self.alpha.shape != (d_id,) or self.beta.shape != (d_exp,) or self.delta.shape != (d_tex,):
            raise ValueError("coefficient dims do not match basis")


@dataclass
class RenderedImage:
    rgb: np.ndarray  # H x W x C, in [0, 1]
    depth: np.ndarray  # H x W, +inf where empty
    mask: np.ndarray  # H x W bool
    triangle_id: np.ndarray  # H x W int, -1 where empty


@dataclass
class Fragments:
    """Winning fragment per covered pixel (flat pixel indices)."""

    pixel: np.ndarray
    triangle: np.ndarray
    depth: np.ndarray
    weights: np.ndarray  # K x 3 perspective-correct barycentrics


def _edge(ax, ay, bx, by, px, py):
    return (px - ax) * (by - ay) - (py - ay) * (bx - ax)


def rasterize_fragments(uv, depth, triangles, width, height) -> Fragments:
    """Cover pixels with screen-space triangles; keep the nearest fragment.

    ``uv`` are pixel coordinates per vertex, ``depth`` positive camera depth.
    Back-facing triangles and triangles touching the near plane are culled.
    """
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    empty = Fragments(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3)))
    if len(tri) == 0:
        return empty

    ok = np.all(depth[tri] > 0, axis=1) & np.all(np.isfinite(uv[tri]).reshape(len(tri), -1), axis=1)
    x = uv[:, 0]
    y = uv[:, 1]
    x0, y0 = x[tri[:, 0]], y[tri[:, 0]]
    x1, y1 = x[tri[:, 1]], y[tri[:, 1]]
    x2, y2 = x[tri[:, 2]], y[tri[:, 2]]
    with np.errstate(invalid="ignore"):
        # a face that is counter-clockwise seen from the camera (y up) has
        # positive area under this edge function in y-down pixel space
        area = _signed_edge(tri[:, 0], tri[:, 1], x0, y0, x1, y1, x2, y2)
    ok &= area > 0

    ids = np.flatnonzero(ok)
    if ids.size == 0:
        return empty
    txs = np.stack([x0, x1, x2], 1)[ids]
    tys = np.stack([y0, y1, y2], 1)[ids]
    xmin = np.maximum(np.ceil(txs.min(1) - 0.5), 0).astype(np.int64)
    xmax = np.minimum(np.floor(txs.max(1) - 0.5), width - 1).astype(np.int64)
    ymin = np.maximum(np.ceil(tys.min(1) - 0.5), 0).astype(np.int64)
    ymax = np.minimum(np.floor(tys.max(1) - 0.5), height - 1).astype(np.int64)
    bw = np.maximum(xmax - xmin + 1, 0)
    bh = np.maximum(ymax - ymin + 1, 0)
    counts = bw * bh

    pieces = []
    start = 0
    while start < ids.size:
        stop = start
        total = 0
        while stop < ids.size and (total == 0 or total + counts[stop] <= _CHUNK):
            total += counts[stop]
            stop += 1
        if total:
            pieces.append(_cover(slice(start, stop), ids, tri, uv, depth, area,
                                 xmin, ymin, bw, counts, width))
        start = stop
    if not pieces:
        return empty
    pix = np.concatenate([p[0] for p in pieces])
    tid = np.concatenate([p[1] for p in pieces])
    dep = np.concatenate([p[2] for p in pieces])
    wts = np.concatenate([p[3] for p in pieces])

    order = np.lexsort((tid, dep, pix))
    pix, tid, dep, wts = pix[order], tid[order], dep[order], wts[order]
    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    return Fragments(pix[first], tid[first], dep[first], wts[first])


def _signed_edge(ia, ib, ax, ay, bx, by, px, py):
    """Edge function of a->b at p, evaluated in canonical (low index first) order."""
    swap = ia > ib
    cax = np.where(swap, bx, ax)
    cay = np.where(swap, by, ay)
    cbx = np.where(swap, ax, bx)
    cby = np.where(swap, ay, by)
    e = _edge(cax, cay, cbx, cby, px, py)
    return np.where(swap, -e, e)


def _owns_edge(ia, ib, ax, ay, bx, by):
    """Top-left rule for pixels exactly on the edge a->b.

    Interior lies on the positive side, so a left edge runs downward (dy > 0)
    and a top edge is horizontal running leftward (dy == 0, dx < 0). The
    direction is derived from the canonical difference, so the two triangles
    sharing an edge always get complementary answers.
    """
    swap = ia > ib
    cdx = np.where(swap, ax - bx, bx - ax)
    cdy = np.where(swap, ay - by, by - ay)
    dx = np.where(swap, -cdx, cdx)
    dy = np.where(swap, -cdy, cdy)
    return (dy > 0) | ((dy == 0) & (dx < 0))


def _cover(sl, ids, tri, uv, depth, area, xmin, ymin, bw, counts, width):
    t_local = np.arange(sl.start, sl.stop)
    c = counts[sl]
    rep = np.repeat(t_local, c)
    offs = np.cumsum(c) - c
    k = np.arange(rep.size) - np.repeat(offs, c)
    px_i = xmin[rep] + k % bw[rep]
    py_i = ymin[rep] + k // bw[rep]
    px = px_i + 0.5
    py = py_i + 0.5
    tg = ids[rep]
    v = tri[tg]
    x = uv[:, 0]
    y = uv[:, 1]
    inside = np.ones(rep.size, dtype=bool)
    lam = []
    # edge opposite vertex k runs from vertex k+1 to vertex k+2
    for kk in range(3):
        ia = v[:, (kk + 1) % 3]
        ib = v[:, (kk + 2) % 3]
        ax, ay, bx, by = x[ia], y[ia], x[ib], y[ib]
        e = _signed_edge(ia, ib, ax, ay, bx, by, px, py)
        owned = _owns_edge(ia, ib, ax, ay, bx, by)
        inside &= (e > 0) | ((e == 0) & owned)
        lam.append(e)
    keep = np.flatnonzero(inside)
    if keep.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3))
    tg = tg[keep]
    v = v[keep]
    a = area[tg]
    b0 = lam[0][keep] / a
    b1 = lam[1][keep] / a
    b2 = lam[2][keep] / a
    z0, z1, z2 = depth[v[:, 0]], depth[v[:, 1]], depth[v[:, 2]]
    w0 = b0 / z0
    w1 = b1 / z1
    w2 = b2 / z2
    inv = w0 + w1 + w2
    dep = 1.0 / inv
    weights = np.stack([w0 / inv, w1 / inv, w2 / inv], axis=1)
    pix = py_i[keep] * width + px_i[keep]
    return pix, tg, dep, weights


def rasterize(uv, depth, triangles, vertex_attrs, width, height, background=0.0) -> RenderedImage:
    """Rasterize per-vertex attributes (V x C) into an H x W x C image."""
    attrs = np.asarray(vertex_attrs, dtype=np.float64)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    frags = rasterize_fragments(uv, depth, triangles, width, height)
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    n_ch = attrs.shape[1]
    img = np.full((height * width, n_ch), float(background))
    dep = np.full(height * width, np.inf)
    tid = np.full(height * width, -1, dtype=np.int64)
    if frags.pixel.size:
        v = tri[frags.triangle]
        w = frags.weights
        vals = (w[:, 0:1] * attrs[v[:, 0]] + w[:, 1:2] * attrs[v[:, 1]]) + w[:, 2:3] * attrs[v[:, 2]]
        img[frags.pixel] = vals
        dep[frags.pixel] = frags.depth
        tid[frags.pixel] = frags.triangle
    mask = np.isfinite(dep)
    return RenderedImage(
        rgb=img.reshape(height, width, n_ch),
        depth=dep.reshape(height, width),
        mask=mask.reshape(height, width),
        triangle_id=tid.reshape(height, width),
    )


def posed_geometry(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera):
    """Assemble and pose the shape; returns (shape, posed, uv, depth, valid)."""
    coeffs.check(basis)
    shape = assemble_shape(basis, ShapeCoeffs(coeffs.alpha, coeffs.beta))
    posed = transform_vertices(shape, coeffs.pose)
    uv, depth, valid = project(posed, cam)
    return shape, posed, uv, depth, valid


def shaded_colors(basis: MorphableBasis, coeffs: CoefficientSet, posed: np.ndarray) -> np.ndarray:
    texture = assemble_texture(basis, TextureCoeffs(coeffs.delta))
    normals = vertex_normals(posed, basis.triangles)
    return shade(texture, normals, coeffs.gamma).reshape(-1, 3)


def render(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera) -> RenderedImage:
    """Image formation: shape + texture, SH shading, pose, projection, raster."""
    _, posed, uv, depth, _ = posed_geometry(basis, coeffs, cam)
    colors = shaded_colors(basis, coeffs, posed)
    img = rasterize(uv, depth, basis.triangles, colors, cam.width, cam.height)
    np.clip(img.rgb, 0.0, 1.0, out=img.rgb)
    return img


def pseudo_depth_texture(shape: np.ndarray) -> np.ndarray:
    """Per-vertex normalised z of an (unposed) shape, in [0, 1]."""
    z = np.asarray(shape, dtype=np.float64).reshape(-1, 3)[:, 2]
    lo, hi = z.min(), z.max()
    if not hi > lo:
        raise DegenerateGeometryError("flat shape: max(z) == min(z)")
    return (z - lo) / (hi - lo)


def render_pseudo_depth(basis: MorphableBasis, coeffs: CoefficientSet, cam: Camera):
    """Rasterize normalised model-space z as a grey texture; returns (H x W, mask)."""
    shape, _, uv, depth, _ = posed_geometry(basis, coeffs, cam)
    zt = pseudo_depth_texture(shape)
    img = rasterize(uv, depth, basis.triangles, zt, cam.width, cam.height)
    out = np.clip(img.rgb[..., 0], 0.0, 1.0)
    return out, img.mask
