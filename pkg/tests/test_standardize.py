import numpy as np
import pytest

from facestd.basis import boundary_vertices
from facestd.coeffio import read_coefficients
from facestd.fitter import CollectionEstimate, ImageEstimate
from facestd.landmarks import read_landmarks, reproject_landmarks
from facestd.pnm import read_image
from facestd.render import CoefficientSet, render
from facestd.scene import Pose, white_gamma
from facestd.standardize import (
    SceneRanges,
    StandardizationDefaults,
    default_pose,
    generate_synthetic_scene,
    standard_coefficients,
    standardize_collection,
    standardize_image,
    write_standardized,
)


@pytest.fixture(scope="module")
def defaults(basis, cam):
    return StandardizationDefaults.for_basis(basis, cam)


def test_defaults_are_white_and_frontal(defaults):
    g = defaults.gamma0.reshape(3, 9)
    assert np.all(g[:, 1:] == 0)
    np.testing.assert_allclose(g[:, 0], 2 * np.sqrt(np.pi), rtol=1e-15)
    assert np.all(defaults.pose0.euler == 0)
    with pytest.raises(ValueError):
        StandardizationDefaults(white_gamma() + 0.1, defaults.pose0, defaults.cam0)
    with pytest.raises(ValueError):
        StandardizationDefaults(white_gamma(), Pose([0, 0.1, 0], defaults.pose0.translation), defaults.cam0)


def test_default_pose_fills_frame(basis, cam, defaults):
    img = render(basis, CoefficientSet.zeros(basis, white_gamma(), defaults.pose0), cam)
    ys, xs = np.nonzero(img.mask)
    span = max(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1) / 224
    assert 0.75 < span <= 0.9
    assert xs.min() > 0 and ys.min() > 0 and xs.max() < 223 and ys.max() < 223


def test_zero_expression_is_mean_face(basis, cam, defaults):
    fr = standardize_image(basis, np.zeros(64), defaults)
    ref = render(basis, CoefficientSet.zeros(basis, white_gamma(), defaults.pose0), cam)
    assert np.array_equal(fr.rgb, ref.rgb) and np.array_equal(fr.mask, ref.mask)
    # white light: shading is exactly the texture, so pixels stay in the albedo range
    tex = basis.mean_texture.reshape(-1, 3)
    assert fr.rgb[fr.mask].min() >= tex.min() - 1e-12 and fr.rgb[fr.mask].max() <= tex.max() + 1e-12


def test_output_depends_only_on_expression(basis, defaults, rng):
    beta = rng.normal(size=64)
    a = standardize_image(basis, beta, defaults)
    b = standardize_image(basis, beta.copy(), defaults)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
    # other attributes of a fitted estimate are ignored
    est1 = CollectionEstimate(rng.normal(size=80), rng.normal(size=80),
                              [ImageEstimate(beta, Pose(rng.normal(size=3), rng.normal(size=3)), rng.normal(size=27))])
    est2 = CollectionEstimate(rng.normal(size=80), rng.normal(size=80),
                              [ImageEstimate(beta, Pose(rng.normal(size=3), rng.normal(size=3)), rng.normal(size=27))])
    f1, f2 = standardize_collection(basis, est1, defaults)[0], standardize_collection(basis, est2, defaults)[0]
    assert np.array_equal(f1.rgb, a.rgb) and np.array_equal(f2.depth, a.depth)
    with pytest.raises(ValueError):
        standardize_image(basis, np.zeros(63), defaults)


def influenced_triangles(basis, col):
    moved = np.flatnonzero(np.any(basis.basis_exp[:, col].reshape(-1, 3) != 0, axis=1))
    tri = basis.triangles
    # vertex normals reach one ring further than the moved vertices
    ring = np.unique(tri[np.any(np.isin(tri, moved), axis=1)])
    return np.flatnonzero(np.any(np.isin(tri, ring), axis=1)), moved


def test_expression_differences_stay_in_support(basis, cam, defaults, rng):
    shared = 0.5 * rng.normal(size=64)
    for col in (0, 7, 33):
        other = shared.copy()
        other[col] += 1.5
        a = render(basis, standard_coefficients(basis, shared, defaults), cam)
        b = render(basis, standard_coefficients(basis, other, defaults), cam)
        diff = np.any(a.rgb != b.rgb, axis=2) | (a.mask != b.mask)
        assert diff.any()
        allowed, _ = influenced_triangles(basis, col)
        ok = np.isin(a.triangle_id, allowed) | np.isin(b.triangle_id, allowed)
        assert np.all(ok[diff])


def test_mask_unchanged_when_silhouette_untouched(basis, cam, defaults):
    edge = boundary_vertices(basis.triangles)
    cols = [k for k in range(64) if not np.isin(influenced_triangles(basis, k)[1], edge).any()]
    assert cols
    base = standardize_image(basis, np.zeros(64), defaults)
    for k in cols[:5]:
        beta = np.zeros(64)
        beta[k] = 1.0
        assert np.array_equal(standardize_image(basis, beta, defaults).mask, base.mask)


def test_constant_expression_gives_identical_frames(basis, defaults, rng):
    beta = rng.normal(size=64)
    est = CollectionEstimate(np.zeros(80), np.zeros(80),
                             [ImageEstimate(beta.copy(), Pose(), white_gamma()) for _ in range(3)])
    frames = standardize_collection(basis, est, defaults)
    assert len(frames) == 3
    for f in frames[1:]:
        assert np.array_equal(f.rgb, frames[0].rgb) and np.array_equal(f.depth, frames[0].depth)


def test_pseudo_depth_spans_unit_range(basis, defaults, rng):
    for _ in range(3):
        fr = standardize_image(basis, rng.normal(size=64), defaults)
        d = fr.depth[fr.mask]
        assert d.min() >= 0 and d.max() <= 1
        assert d.max() > 0.97 and d.min() < 0.05


def test_write_standardized(tmp_path, basis, defaults):
    frames = [standardize_image(basis, np.zeros(64), defaults)] * 2
    manifest = write_standardized(frames, tmp_path)
    lines = manifest.read_text().splitlines()
    assert lines == ["0 00000.rgb.ppm 00000.depth.pgm", "1 00001.rgb.ppm 00001.depth.pgm"]
    rgb = read_image(tmp_path / "00000.rgb.ppm")
    assert np.max(np.abs(rgb - frames[0].rgb)) <= 0.5 / 255 + 1e-12


def test_zero_ranges_give_identical_mean_frames(tmp_path, small_basis, cam):
    sc = generate_synthetic_scene(small_basis, 0, 3, cam, tmp_path, SceneRanges.zero(), collection_id="z")
    imgs = [read_image(it.image) for it in sc.collection.items]
    assert all(np.array_equal(imgs[0], im) for im in imgs[1:])
    ref = render(small_basis, CoefficientSet.zeros(small_basis, white_gamma(), default_pose(small_basis, cam)), cam)
    assert np.max(np.abs(imgs[0] - ref.rgb)) <= 0.5 / 255 + 1e-12


def test_scene_is_reproducible_and_closed_loop(tmp_path, small_basis, cam):
    a = generate_synthetic_scene(small_basis, 42, 3, cam, tmp_path / "a")
    b = generate_synthetic_scene(small_basis, 42, 3, cam, tmp_path / "b")
    for ia, ib in zip(a.collection.items, b.collection.items):
        assert ia.image.read_bytes() == ib.image.read_bytes()
        assert ia.landmarks.read_bytes() == ib.landmarks.read_bytes()
    for item, gt in zip(a.collection.items, a.ground_truth):
        side = read_coefficients(item.image.with_name(item.name + ".gt.coef"))
        assert np.array_equal(side.beta, gt.beta)
        again = reproject_landmarks(small_basis, side, cam).points
        assert np.max(np.abs(again - read_landmarks(item.landmarks))) < 1e-9
    # the collection shares identity and texture
    assert all(np.array_equal(g.alpha, a.ground_truth[0].alpha) for g in a.ground_truth)


def test_scene_images_are_not_saturated(tmp_path, basis, cam):
    sc = generate_synthetic_scene(basis, 3, 4, cam, tmp_path)
    for item, gt in zip(sc.collection.items, sc.ground_truth):
        img = read_image(item.image)
        m = render(basis, gt, cam).mask
        assert np.mean(img[m] >= 1.0) < 0.01
