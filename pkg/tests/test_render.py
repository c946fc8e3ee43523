import numpy as np
import pytest

from facestd.basis import MorphableBasis
from facestd.render import (
    CoefficientSet,
    DegenerateGeometryError,
    pseudo_depth_texture,
    rasterize,
    render,
    render_pseudo_depth,
)
from facestd.scene import Camera, Pose, project, white_gamma
from facestd.standardize import default_pose

from oracles import brute_force_zbuffer, random_mesh


@pytest.mark.parametrize("seed", range(10))
def test_zbuffer_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    w, h = 24, 20
    uv, depth, tri = random_mesh(rng, int(rng.integers(5, 51)), w, h)
    img = rasterize(uv, depth, tri, np.zeros(len(uv)), w, h)
    zref, tref = brute_force_zbuffer(uv, depth, tri, w, h)
    assert np.array_equal(img.triangle_id, tref)
    assert np.array_equal(img.depth, zref)  # bit-identical, inf where empty
    assert np.array_equal(img.mask, np.isfinite(zref))


def test_shared_edges_are_watertight():
    # fan of triangles around a centre vertex plus a grid: every pixel inside
    # is owned by exactly one triangle
    rng = np.random.default_rng(3)
    n = 7
    gx, gy = np.meshgrid(np.linspace(2.5, 29.5, n), np.linspace(2.5, 29.5, n))
    uv = np.stack([gx.ravel(), gy.ravel()], 1)
    uv[1:-1] += 0.0
    interior = (gx.ravel() > 3) & (gx.ravel() < 29) & (gy.ravel() > 3) & (gy.ravel() < 29)
    uv[interior] += rng.uniform(-1.5, 1.5, size=(interior.sum(), 2))
    idx = np.arange(n * n).reshape(n, n)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    # y down: (a, c, b) is counter-clockwise on screen, i.e. front facing
    tri = np.concatenate([np.stack([a, c, b], 1), np.stack([b, c, d], 1)])
    depth = np.full(len(uv), 3.0)
    total = np.zeros((32, 32), int)
    for t in tri:
        total += rasterize(uv, depth, t[None], np.zeros(len(uv)), 32, 32).mask
    assert total.max() == 1
    # the outer boundary is the axis-aligned square [2.5, 29.5): 27 x 27 pixels
    assert total.sum() == 27 * 27
    whole = rasterize(uv, depth, tri, np.zeros(len(uv)), 32, 32)
    assert np.array_equal(whole.mask, total == 1)


def test_back_faces_are_culled():
    uv = np.array([[2.0, 2.0], [20.0, 2.0], [2.0, 20.0]])
    front = rasterize(uv, np.ones(3), np.array([[0, 2, 1]]), np.zeros(3), 24, 24)
    back = rasterize(uv, np.ones(3), np.array([[0, 1, 2]]), np.zeros(3), 24, 24)
    assert front.mask.any() and not back.mask.any()


def test_triangle_interior_matches_half_space_and_texture():
    w = h = 40
    uv = np.array([[5.2, 4.1], [8.3, 35.7], [36.4, 20.6]])
    colors = np.array([[1.0, 0.0, 0.2], [0.0, 1.0, 0.4], [0.0, 0.0, 1.0]])
    img = rasterize(uv, np.full(3, 2.0), np.array([[0, 1, 2]]), colors, w, h)
    (ax, ay), (bx, by), (cx, cy) = uv
    area = (cx - ax) * (by - ay) - (cy - ay) * (bx - ax)
    for y in range(h):
        for x in range(w):
            px, py = x + 0.5, y + 0.5
            l0 = ((px - bx) * (cy - by) - (py - by) * (cx - bx)) / area
            l1 = ((px - cx) * (ay - cy) - (py - cy) * (ax - cx)) / area
            l2 = 1 - l0 - l1
            inside = min(l0, l1, l2) > 0
            assert img.mask[y, x] == inside
            if inside:
                np.testing.assert_allclose(img.rgb[y, x], l0 * colors[0] + l1 * colors[1] + l2 * colors[2], atol=1e-12)
            else:
                assert np.all(img.rgb[y, x] == 0)


def test_nearer_triangle_wins():
    uv = np.array([[2.0, 2.0], [2.0, 30.0], [30.0, 16.0]] * 2)
    depth = np.array([5.0] * 3 + [3.0] * 3)
    tri = np.array([[0, 1, 2], [3, 4, 5]])
    img = rasterize(uv, depth, tri, np.array([0.0] * 3 + [1.0] * 3), 32, 32)
    assert np.all(img.triangle_id[img.mask] == 1)
    np.testing.assert_allclose(img.rgb[img.mask], 1.0, atol=1e-12)


def test_equal_depth_tie_goes_to_lower_index():
    uv = np.array([[2.0, 2.0], [2.0, 30.0], [30.0, 16.0]] * 2)
    tri = np.array([[3, 4, 5], [0, 1, 2]])
    img = rasterize(uv, np.full(6, 4.0), tri, np.zeros(6), 32, 32)
    assert np.all(img.triangle_id[img.mask] == 0)


def test_perspective_correct_interpolation():
    # a plane tilted in depth: attribute linear in 3D must stay linear in 3D
    cam = Camera(50.0, (16, 16), (32, 32))
    pts = np.array([[-1.0, -1.0, -3.0], [1.0, -1.0, -6.0], [1.0, 1.0, -6.0], [-1.0, 1.0, -3.0]])
    uv, depth, _ = project(pts.ravel(), cam)
    attr = pts[:, 0]
    tri = np.array([[0, 1, 2], [0, 2, 3]])
    img = rasterize(uv, depth, tri, attr, 32, 32)
    ys, xs = np.nonzero(img.mask)
    for y, x in zip(ys, xs):
        # ray through the pixel centre meets the plane z = -4.5 - 1.5 x
        dx = (x + 0.5 - 16) / 50.0
        t = 4.5 / (1 - 1.5 * dx)
        assert img.rgb[y, x, 0] == pytest.approx(t * dx, abs=1e-12)
        assert img.depth[y, x] == pytest.approx(t, rel=1e-12)


def plane_basis(tilt):
    n = 9
    g = np.linspace(-1, 1, n)
    x, y = np.meshgrid(g, g)
    pts = np.stack([x.ravel(), y.ravel(), tilt * x.ravel()], 1)
    idx = np.arange(n * n).reshape(n, n)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tri = np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)])
    v = n * n
    return MorphableBasis(pts.ravel(), np.full(3 * v, 0.5), np.zeros((3 * v, 1)), np.zeros((3 * v, 1)),
                          np.zeros((3 * v, 1)), tri, np.arange(4))


def test_pseudo_depth_of_tilted_plane_matches_plane_equation():
    b = plane_basis(0.5)
    cam = Camera(60.0, (20, 20), (40, 40))
    pose = Pose(np.zeros(3), np.array([0, 0, -5.0]))
    c = CoefficientSet.zeros(b, white_gamma(), pose)
    img, mask = render_pseudo_depth(b, c, cam)
    assert mask.sum() > 500
    ys, xs = np.nonzero(mask)
    for y, x in zip(ys, xs):
        dx = (x + 0.5 - 20) / 60.0
        # ray (t dx, t dy, -t) meets z = 0.5 X - 5 in camera space
        t = 5.0 / (1 + 0.5 * dx)
        model_x = t * dx
        assert img[y, x] == pytest.approx((model_x + 1) / 2, abs=1e-9)


def test_pseudo_depth_range_and_extremes(basis, cam):
    c = CoefficientSet.zeros(basis, white_gamma(), default_pose(basis, cam))
    zt = pseudo_depth_texture(basis.mean_shape)
    assert zt.min() == 0.0 and zt.max() == 1.0
    img, mask = render_pseudo_depth(basis, c, cam)
    assert img.min() >= 0 and img.max() <= 1
    assert img[mask].max() > 0.97 and img[mask].min() < 0.03


def test_flat_shape_is_degenerate():
    b = plane_basis(0.0)
    with pytest.raises(DegenerateGeometryError):
        render_pseudo_depth(b, CoefficientSet.zeros(b, white_gamma(), Pose([0, 0, 0], [0, 0, -5])), Camera.centered())


def test_face_render_properties(basis, cam, rng):
    pose = default_pose(basis, cam)
    c = CoefficientSet(rng.normal(size=80), 0.5 * rng.normal(size=64), rng.normal(size=80), white_gamma(), pose)
    a = render(basis, c, cam)
    b = render(basis, c.copy(), cam)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
    assert a.rgb.min() >= 0 and a.rgb.max() <= 1
    assert np.array_equal(a.mask, np.isfinite(a.depth))
    # lighting and texture never change coverage
    c2 = c.copy()
    c2.gamma = rng.normal(size=27)
    c2.delta = rng.normal(size=80)
    assert np.array_equal(render(basis, c2, cam).mask, a.mask)
    c3 = c.copy()
    c3.gamma = np.zeros(27)
    dark = render(basis, c3, cam)
    assert np.all(dark.rgb[dark.mask] == 0)


def test_dc_white_render_reproduces_texture(basis, cam):
    # with DC-only unit light every pixel is a convex blend of albedos
    pose = default_pose(basis, cam)
    c = CoefficientSet.zeros(basis, white_gamma(), pose)
    img = render(basis, c, cam)
    tex = basis.mean_texture.reshape(-1, 3)
    tri = basis.triangles[img.triangle_id[img.mask]]
    lo = tex[tri].min(axis=1)
    hi = tex[tri].max(axis=1)
    vals = img.rgb[img.mask]
    assert np.all(vals >= lo - 1e-12) and np.all(vals <= hi + 1e-12)


def test_face_outside_viewport_is_empty(basis, cam):
    c = CoefficientSet.zeros(basis, white_gamma(), Pose([0, 0, 0], [100, 0, -10]))
    img = render(basis, c, cam)
    assert not img.mask.any()
