"""Pipeline configuration: sectioned ``key = value`` text files."""
from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from .fitter import FitConfig
from .losses import LossWeights
from .scene import Camera


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass
class CameraSection:
    focal: float = 1015.0
    width: int = 224
    height: int = 224

    def camera(self) -> Camera:
        return Camera.centered(self.focal, self.width, self.height)


@dataclass
class FitSection:
    outer_iterations: int = 4
    gn_iterations: int = 40
    damping: float = 1e-3
    tolerance: float = 1e-6
    lip_weight: float = 10.0
    photo_samples: int = 1500


@dataclass
class SyncSection:
    window: int = 15
    smoothing: int = 15
    tolerance: int = 1


@dataclass
class BasisSection:
    path: str = ""


@dataclass
class PipelineConfig:
    basis: BasisSection = field(default_factory=BasisSection)
    camera: CameraSection = field(default_factory=CameraSection)
    loss: LossWeights = field(default_factory=LossWeights)
    fit: FitSection = field(default_factory=FitSection)
    sync: SyncSection = field(default_factory=SyncSection)

    SECTIONS = ("basis", "camera", "loss", "fit", "sync")

    def fit_config(self, seed: int = 0) -> FitConfig:
        f = self.fit
        return FitConfig(
            weights=self.loss,
            lip_weight=f.lip_weight,
            outer_iterations=f.outer_iterations,
            gn_iterations=f.gn_iterations,
            damping=f.damping,
            tolerance=f.tolerance,
            seed=seed,
            photo_samples=f.photo_samples,
        )

    def items(self):
        """Flattened ``(section.key, value)`` pairs in a fixed order."""
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                yield f"{sec}.{f.name}", getattr(obj, f.name)

    def set(self, dotted: str, raw) -> None:
        sec, _, key = dotted.partition(".")
        if sec not in self.SECTIONS:
            raise ConfigError(f"unknown config section {sec!r}", dotted)
        obj = getattr(self, sec)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise ConfigError(f"unknown config key {dotted!r}", dotted)
        cur = getattr(obj, key)
        try:
            val = type(cur)(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {dotted!r}: {raw!r}", dotted) from exc
        if isinstance(val, (int, float)) and not isinstance(val, bool) and not val >= 0:
            raise ConfigError(f"{dotted!r} must be >= 0", dotted)
        setattr(obj, key, val)

    def validate(self) -> None:
        try:
            self.camera.camera()
            LossWeights(**{f.name: getattr(self.loss, f.name) for f in fields(self.loss)})
            self.fit_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for k in ("window", "smoothing"):
            if getattr(self.sync, k) < 1:
                raise ConfigError(f"sync.{k} must be >= 1", f"sync.{k}")


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the file (if any), then ``section.key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                cfg.set(f"{sec}.{key}", raw.strip())
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not section.key=value", item)
        cfg.set(key.strip(), raw.strip())
    cfg.validate()
    return cfg


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible generator for one named pipeline stage."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
