"""Plain-text coefficient records: ``name = v1 v2 ...`` one per line."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .render import CoefficientSet
from .scene import Pose

FIELDS = ("alpha", "beta", "delta", "gamma", "pose")


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())


def format_records(records: dict) -> str:
    lines = []
    for key, val in records.items():
        if isinstance(val, str):
            lines.append(f"{key} = {val}")
        else:
            lines.append(f"{key} = {_fmt(val)}".rstrip())
    return "\n".join(lines) + "\n"


def parse_records(text: str, source="<string>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'name = values'")
        key, _, rest = line.partition("=")
        key = key.strip()
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate record {key!r}")
        out[key] = rest.strip()
    return out


def _floats(text, key, source):
    try:
        arr = np.array([float(t) for t in text.split()], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{source}: record {key!r} is not a list of numbers") from exc
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{source}: record {key!r} has non-finite values")
    return arr


def coefficient_records(c: CoefficientSet) -> dict:
    return {
        "dims": f"{c.alpha.size} {c.beta.size} {c.delta.size}",
        "alpha": c.alpha,
        "beta": c.beta,
        "delta": c.delta,
        "gamma": c.gamma,
        "pose": c.pose.as_vector(),
    }


def write_coefficients(path, c: CoefficientSet) -> None:
    Path(path).write_text(format_records(coefficient_records(c)))


def read_coefficient_fields(path) -> dict:
    """Parse a coefficient file into arrays; absent fields are omitted."""
    path = Path(path)
    rec = parse_records(path.read_text(), path)
    unknown = set(rec) - set(FIELDS) - {"dims", "frames", "collection"}
    if unknown:
        raise ValueError(f"{path}: unknown record(s) {sorted(unknown)}")
    out = {k: _floats(rec[k], k, path) for k in FIELDS if k in rec}
    if "dims" in rec:
        dims = [int(t) for t in rec["dims"].split()]
        if len(dims) != 3:
            raise ValueError(f"{path}: dims must list three integers")
        for key, d in zip(("alpha", "beta", "delta"), dims):
            if key in out and out[key].size != d:
                raise ValueError(f"{path}: {key} has {out[key].size} values, dims declare {d}")
        out["dims"] = tuple(dims)
    if "gamma" in out and out["gamma"].size != 27:
        raise ValueError(f"{path}: gamma must have 27 values")
    if "pose" in out and out["pose"].size != 6:
        raise ValueError(f"{path}: pose must have 6 values")
    for k in ("frames", "collection"):
        if k in rec:
            out[k] = rec[k]
    return out


def read_coefficients(path) -> CoefficientSet:
    f = read_coefficient_fields(path)
    missing = [k for k in FIELDS if k not in f]
    if missing:
        raise ValueError(f"{path}: missing record(s) {missing}")
    return CoefficientSet(f["alpha"], f["beta"], f["delta"], f["gamma"], Pose.from_vector(f["pose"]))
