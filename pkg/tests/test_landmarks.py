import numpy as np
import pytest

from facestd.basis import LIP_SLICE, mirror_pairs
from facestd.landmarks import (
    INVALID_PENALTY_PX,
    collection_lmd,
    group_lmd,
    lip_lmd,
    lip_metric_weights,
    lmd,
    loss_weights,
    read_landmarks,
    reproject_landmarks,
    summarize_groups,
    write_landmarks,
)
from facestd.render import CoefficientSet
from facestd.scene import Pose, project, white_gamma
from facestd.standardize import default_pose

from oracles import loop_lmd


def test_symmetric_face_gives_mirrored_landmarks(basis, cam):
    pose = default_pose(basis, cam)
    pose = Pose(np.zeros(3), np.array([0.0, pose.translation[1], pose.translation[2]]))
    rep = reproject_landmarks(basis, CoefficientSet.zeros(basis, white_gamma(), pose), cam)
    cx = cam.principal_point[0]
    for left, right in mirror_pairs():
        pl, pr = rep.points[left], rep.points[right]
        assert abs((pl[0] - cx) + (pr[0] - cx)) < 1e-6
        assert abs(pl[1] - pr[1]) < 1e-6


def test_translation_parallel_to_image_shifts_uniformly(basis, cam):
    pose = default_pose(basis, cam)
    c = CoefficientSet.zeros(basis, white_gamma(), pose)
    a = reproject_landmarks(basis, c, cam).points
    z = pose.translation[2] + basis.vertices(basis.mean_shape)[basis.landmark_indices, 2]
    # each landmark moves by f * shift / depth, uniform across points of equal depth
    shifted = Pose(pose.euler, pose.translation + np.array([0.01, -0.02, 0.0]))
    b = reproject_landmarks(basis, CoefficientSet.zeros(basis, white_gamma(), shifted), cam).points
    np.testing.assert_allclose(b[:, 0] - a[:, 0], -cam.focal * 0.01 / z, rtol=1e-9)
    np.testing.assert_allclose(b[:, 1] - a[:, 1], cam.focal * -0.02 / z, rtol=1e-9)


def test_identity_coefficients_project_mean_landmarks(basis, cam):
    pose = default_pose(basis, cam)
    rep = reproject_landmarks(basis, CoefficientSet.zeros(basis, white_gamma(), pose), cam)
    pts = basis.vertices(basis.mean_shape)[basis.landmark_indices] + pose.translation
    uv, _, _ = project(pts.ravel(), cam)
    np.testing.assert_allclose(rep.points, uv, atol=1e-9)
    assert rep.valid.all()


def test_landmarks_behind_camera_are_invalid(basis, cam):
    rep = reproject_landmarks(basis, CoefficientSet.zeros(basis, white_gamma(), Pose([0, 0, 0], [0, 0, 5.0])), cam)
    assert not rep.valid.any()
    d = lmd(np.zeros((68, 2)), rep.points, valid=rep.valid)
    assert d == INVALID_PENALTY_PX


def test_lmd_examples():
    a = np.zeros((68, 2))
    assert lmd(a, a) == 0
    b = a.copy()
    b[10] = (3, 4)
    assert lmd(a, b) == pytest.approx(5 / 68, abs=1e-15)
    with pytest.raises(ValueError):
        lmd(a, a[:67])


def test_lmd_matches_loop(rng):
    for _ in range(20):
        n = int(rng.integers(1, 80))
        a, b, w = rng.normal(size=(n, 2)) * 50, rng.normal(size=(n, 2)) * 50, rng.uniform(0.1, 10, n)
        assert lmd(a, b, w) == pytest.approx(loop_lmd(a, b, w), rel=1e-12)
        assert lmd(a, b, w) == pytest.approx(lmd(b, a, w), rel=1e-15)
        assert lmd(a, b, w) >= 0
        s, o = rng.uniform(0.1, 5), rng.normal(size=2)
        assert lmd(s * (a - o), s * (b - o), w) == pytest.approx(s * lmd(a, b, w), rel=1e-10)


def test_weights():
    w = loss_weights()
    assert w.shape == (68,) and np.all(w[48:] == 10) and np.all(w[:48] == 1)
    m = lip_metric_weights()
    assert m.sum() == 20 and np.all(m[LIP_SLICE] == 1)


def test_lip_lmd_ignores_non_lip_points(rng):
    a, b = rng.normal(size=(68, 2)), rng.normal(size=(68, 2))
    b2 = b.copy()
    b2[:48] += 100
    assert lip_lmd(a, b) == lip_lmd(a, b2)
    assert lip_lmd(a, b) == pytest.approx(loop_lmd(a[48:], b[48:], np.ones(20)), rel=1e-12)


def test_group_lmd_examples():
    assert group_lmd([[7.0]]) == 7.0
    assert [collection_lmd(c) for c in [[1, 3], [5]]] == [2, 5]
    assert group_lmd([[1, 3], [5]]) == 3.5
    with pytest.raises(ValueError):
        group_lmd([[1], []])
    with pytest.raises(ValueError):
        group_lmd([])


def test_group_lmd_matches_nested_loop(rng):
    for _ in range(10):
        groups = [[float(v) for v in rng.uniform(0, 3, int(rng.integers(1, 6)))] for _ in range(int(rng.integers(1, 6)))]
        acc = 0.0
        for coll in groups:
            s = 0.0
            for v in coll:
                s += v
            acc += s / len(coll)
        assert group_lmd(groups) == pytest.approx(acc / len(groups), rel=1e-12)
    same = [[1.0, 2.0, 4.0]] * 3
    assert group_lmd(same) == pytest.approx(np.mean(sum(same, [])))


def test_summarize_groups():
    s = summarize_groups([[[1, 3], [5]], [[1.0]], [[2.0], [4.0]]])
    assert s.per_group == [3.5, 1.0, 3.0]
    assert (s.min, s.max) == (1.0, 3.5) and s.avg == pytest.approx(2.5)


def test_landmark_file_round_trip(tmp_path, rng):
    pts = rng.normal(size=(68, 2)) * 100
    write_landmarks(pts, tmp_path / "a.lmk")
    assert np.array_equal(read_landmarks(tmp_path / "a.lmk"), pts)
    (tmp_path / "bad.lmk").write_text("1 2 3\n")
    with pytest.raises(ValueError):
        read_landmarks(tmp_path / "bad.lmk")
