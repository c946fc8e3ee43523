import numpy as np
import pytest

from facestd.coeffio import read_coefficient_fields, read_coefficients, write_coefficients
from facestd.config import ConfigError, PipelineConfig, load_config, substream
from facestd.render import CoefficientSet
from facestd.scene import Pose


def test_coefficients_round_trip_exactly(tmp_path, rng):
    c = CoefficientSet(rng.normal(size=80), rng.normal(size=64), rng.normal(size=80), rng.normal(size=27),
                       Pose(rng.normal(size=3), rng.normal(size=3)))
    write_coefficients(tmp_path / "a.coef", c)
    d = read_coefficients(tmp_path / "a.coef")
    for k in ("alpha", "beta", "delta", "gamma"):
        assert np.array_equal(getattr(c, k), getattr(d, k))
    assert np.array_equal(c.pose.as_vector(), d.pose.as_vector())


def test_partial_and_invalid_records(tmp_path):
    (tmp_path / "p.coef").write_text("beta = 1 2 3\n")
    f = read_coefficient_fields(tmp_path / "p.coef")
    assert list(f) == ["beta"] and np.array_equal(f["beta"], [1, 2, 3])
    with pytest.raises(ValueError, match="missing"):
        read_coefficients(tmp_path / "p.coef")
    for text in ("zeta = 1\n", "dims = 1 2 3\nalpha = 1 2\n", "gamma = 1 2\n", "beta = 1 x\n",
                 "beta = 1\nbeta = 2\n", "beta = nan\n", "junk line\n"):
        (tmp_path / "b.coef").write_text(text)
        with pytest.raises(ValueError):
            read_coefficient_fields(tmp_path / "b.coef")


def test_config_defaults_file_and_overrides(tmp_path):
    cfg = load_config()
    assert cfg.loss.lambda_pho == 1.92 and cfg.sync.window == 15
    (tmp_path / "c.ini").write_text("[fit]\nouter_iterations = 2\n[loss]\nlambda_lan = 0.5\n")
    cfg = load_config(tmp_path / "c.ini", ["sync.window=9"])
    assert cfg.fit.outer_iterations == 2 and cfg.loss.lambda_lan == 0.5 and cfg.sync.window == 9
    fc = cfg.fit_config(seed=3)
    assert fc.outer_iterations == 2 and fc.weights.lambda_lan == 0.5 and fc.seed == 3
    names = dict(cfg.items())
    assert names["camera.focal"] == 1015.0 and "fit.damping" in names


@pytest.mark.parametrize(
    "override,key",
    [("loss.lambda_foo=1", "loss.lambda_foo"), ("bogus.x=1", "bogus.x"), ("fit.damping=abc", "fit.damping"),
     ("loss.lambda_pho=-1", "loss.lambda_pho"), ("sync.window=0", "sync.window")],
)
def test_config_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as err:
        load_config(None, [override])
    assert err.value.key == key


def test_config_file_unknown_key(tmp_path):
    (tmp_path / "c.ini").write_text("[camera]\nfocus = 3\n")
    with pytest.raises(ConfigError) as err:
        load_config(tmp_path / "c.ini")
    assert err.value.key == "camera.focus"


def test_substreams_are_reproducible_and_distinct():
    a = substream(5, "scene").random(4)
    assert np.array_equal(a, substream(5, "scene").random(4))
    assert not np.array_equal(a, substream(5, "sync").random(4))
    assert not np.array_equal(a, substream(6, "scene").random(4))
    assert isinstance(PipelineConfig().camera.camera().focal, float)
