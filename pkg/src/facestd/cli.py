"""Command-line entry point.

Every command writes a ``key=value`` run manifest beside its outputs and
prints ``error: kind=<kind> ...`` on stderr with a nonzero exit on failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .basis import DEFAULT_DIMS, BasisFormatError, generate_synthetic_basis, load_basis, save_basis
from .coeffio import format_records, read_coefficient_fields, read_coefficients, write_coefficients
from .config import ConfigError, PipelineConfig, load_config, substream
from .dataset import DatasetError, scan_dataset
from .fitter import FitError, fit_collection, fit_per_image_observations, form_mixed_coefficients, load_observations
from .landmarks import lip_lmd, read_landmarks, reproject_landmarks, summarize_groups
from .pnm import write_image
from .render import CoefficientSet, render, render_pseudo_depth
from .scene import Pose
from .standardize import SceneRanges, StandardizationDefaults, generate_synthetic_scene, standardize_image, write_standardized
from .synceval import (
    ScoredTrack,
    SyncError,
    asd_scores,
    classification_metrics,
    determine_offset,
    offset_accuracy,
    FeatureStream,
    read_stream,
    synthetic_audio,
    write_metrics,
    write_stream,
)

log = logging.getLogger("facestd")

COLLECTION_FILE = "collection.coef"
TRACE_FILE = "trace.csv"


class CommandError(RuntimeError):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def digest(path: Path) -> str:
    """sha256 of a file, or of the sorted relative names + contents of a tree."""
    h = hashlib.sha256()
    path = Path(path)
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(hashlib.sha256(p.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(target: Path, command: str, cfg: PipelineConfig, params: dict, inputs: dict) -> Path:
    target = Path(target)
    path = target / "run_manifest.txt" if target.is_dir() else target.with_name(target.name + ".manifest")
    lines = ["tool=facestd", f"version={__version__}", f"command={command}"]
    lines += [f"param.{k}={v}" for k, v in params.items()]
    lines += [f"config.{k}={v}" for k, v in cfg.items()]
    lines += [f"input.{k}.sha256={digest(p)}" for k, p in inputs.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def _basis(args, cfg):
    path = args.basis or cfg.basis.path
    if not path:
        raise CommandError("usage", "no basis given (use --basis or basis.path in the config)")
    return Path(path), load_basis(path)


def _pool(threads):
    return ThreadPoolExecutor(max_workers=max(1, threads))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_basis(args, cfg):
    dims = tuple(args.dims) if args.dims else DEFAULT_DIMS
    b = generate_synthetic_basis(args.seed, args.vertices, dims)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_basis(b, out)
    write_manifest(out, "gen-basis", cfg, {"seed": args.seed, "vertices": args.vertices, "dims": " ".join(map(str, dims))}, {})
    log.info("wrote %s (%d vertices)", out, b.n_vertices)


def cmd_gen_scene(args, cfg):
    bpath, basis = _basis(args, cfg)
    cam = cfg.camera.camera()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranges = SceneRanges(landmark_noise=args.landmark_noise)
    rng = substream(args.seed, "scene")
    # one child seed per collection keeps collections independent of each other
    seeds = rng.integers(0, 2**63 - 1, size=args.collections)
    for k, s in enumerate(seeds):
        generate_synthetic_scene(basis, int(s), args.frames, cam, out, ranges, collection_id=f"subject{k:03d}")
    params = {"seed": args.seed, "collections": args.collections, "frames": args.frames, "landmark_noise": args.landmark_noise}
    write_manifest(out, "gen-scene", cfg, params, {"basis": bpath})


def _coefficients_with_defaults(path, basis, defaults):
    f = read_coefficient_fields(path)
    d_id, d_exp, d_tex = basis.dims
    gamma = f.get("gamma", defaults.gamma0)
    pose = Pose.from_vector(f["pose"]) if "pose" in f else defaults.pose0
    c = CoefficientSet(
        f.get("alpha", np.zeros(d_id)), f.get("beta", np.zeros(d_exp)), f.get("delta", np.zeros(d_tex)), gamma,
        Pose(pose.euler.copy(), pose.translation.copy()),
    )
    c.check(basis)
    return c


def cmd_synth(args, cfg):
    bpath, basis = _basis(args, cfg)
    cam = cfg.camera.camera()
    defaults = StandardizationDefaults.for_basis(basis, cam)
    coeffs = _coefficients_with_defaults(args.coef, basis, defaults)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(render(basis, coeffs, cam).rgb, out, "rgb8")
    inputs = {"basis": bpath, "coef": Path(args.coef)}
    if args.depth:
        depth, _ = render_pseudo_depth(basis, coeffs, cam)
        write_image(depth, args.depth, "depth16")
    write_manifest(out, "synth", cfg, {"depth": Path(args.depth).name if args.depth else ""}, inputs)


def _write_fit(out: Path, cid: str, names, results, per_image: bool):
    d = out / cid
    d.mkdir(parents=True, exist_ok=True)
    rows = ["image,iteration,total,photometric,landmark,regularization"]
    if per_image:
        for name, r in zip(names, results):
            write_coefficients(d / f"{name}.coef", r.estimate.coefficients(0))
            rows += [f"{name},{t.iteration},{t.total!r},{t.photometric!r},{t.landmark!r},{t.regularization!r}" for t in r.trace]
    else:
        r = results
        for i, name in enumerate(names):
            write_coefficients(d / f"{name}.coef", r.estimate.coefficients(i))
        rec = {
            "collection": cid,
            "frames": " ".join(names),
            "dims": f"{r.estimate.alpha_shared.size} {r.estimate.per_image[0].beta.size} {r.estimate.delta_shared.size}",
            "alpha": r.estimate.alpha_shared,
            "delta": r.estimate.delta_shared,
        }
        (d / COLLECTION_FILE).write_text(format_records(rec))
        rows += [f"*,{t.iteration},{t.total!r},{t.photometric!r},{t.landmark!r},{t.regularization!r}" for t in r.trace]
    (d / TRACE_FILE).write_text("\n".join(rows) + "\n")


def cmd_fit(args, cfg):
    bpath, basis = _basis(args, cfg)
    cam = cfg.camera.camera()
    data = scan_dataset(args.data)
    fcfg = cfg.fit_config(seed=int(substream(args.seed, "fit").integers(2**31)))
    colls = [c for c in data.collections if not args.collection or c.id in args.collection]
    if not colls:
        raise CommandError("input", "no matching collections")

    def run(coll):
        if args.per_image:
            return fit_per_image_observations(basis, load_observations(coll), cam, fcfg)
        return fit_collection(basis, coll, cam, fcfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _pool(args.threads) as pool:
        results = list(pool.map(run, colls))
    for coll, res in zip(colls, results):
        _write_fit(out, coll.id, [it.name for it in coll.items], res, args.per_image)
    params = {"seed": args.seed, "per_image": args.per_image, "collections": " ".join(c.id for c in colls)}
    write_manifest(out, "fit", cfg, params, {"basis": bpath, "data": Path(args.data)})


def _fit_frames(fit_dir: Path):
    """{collection id: [(frame name, coef path), ...]} in sorted order."""
    out = {}
    for d in sorted(p for p in fit_dir.iterdir() if p.is_dir()):
        frames = sorted(p for p in d.glob("*.coef") if p.name != COLLECTION_FILE)
        if frames:
            out[d.name] = [(p.name[: -len(".coef")], p) for p in frames]
    if not out:
        raise CommandError("input", f"no fitted coefficients under {fit_dir}")
    return out


def cmd_standardize(args, cfg):
    bpath, basis = _basis(args, cfg)
    cam = cfg.camera.camera()
    defaults = StandardizationDefaults.for_basis(basis, cam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.beta_zero:
        fr = standardize_image(basis, np.zeros(basis.dims[1]), defaults)
        write_standardized([fr], out, ["neutral"])
    else:
        if not args.fit:
            raise CommandError("usage", "standardize needs --fit or --beta-zero")
        for cid, frames in _fit_frames(Path(args.fit)).items():
            betas = [read_coefficient_fields(p)["beta"] for _, p in frames]
            with _pool(args.threads) as pool:
                std = list(pool.map(lambda b: standardize_image(basis, b, defaults), betas))
            write_standardized(std, out / cid, [n for n, _ in frames])
    inputs = {"basis": bpath}
    if args.fit and not args.beta_zero:
        inputs["fit"] = Path(args.fit)
    write_manifest(out, "standardize", cfg, {"beta_zero": args.beta_zero}, inputs)


def cmd_eval_lmd(args, cfg):
    bpath, basis = _basis(args, cfg)
    cam = cfg.camera.camera()
    select = [s for s in args.select.split(",") if s] if args.select else []
    data = Path(args.data)
    collections = []
    lines = []
    for cid, frames in _fit_frames(Path(args.fit)).items():
        vals = []
        for name, coef in frames:
            gt_path = data / cid / f"{name}.gt.coef"
            lmk_path = data / cid / f"{name}.lmk"
            if not gt_path.exists() or not lmk_path.exists():
                raise CommandError("input", f"missing ground truth for {cid}/{name}")
            mixed = form_mixed_coefficients(read_coefficients(gt_path), read_coefficients(coef), select)
            rep = reproject_landmarks(basis, mixed, cam)
            v = lip_lmd(read_landmarks(lmk_path), rep.points, valid=rep.valid)
            vals.append(v)
            lines.append(f"datum.{cid}.{name}={v!r}")
        collections.append(vals)
        lines.append(f"collection.{cid}={float(np.mean(vals))!r}")
    s = summarize_groups([collections])
    lines.append(f"group_lmd={s.avg!r}")
    lines.append(f"select={','.join(select)}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    write_manifest(out, "eval-lmd", cfg, {"select": ",".join(select)}, {"basis": bpath, "data": data, "fit": Path(args.fit)})
    print(f"group_lmd={s.avg:.6f}")


def cmd_gen_sync(args, cfg):
    """Toy visual/audio stream pairs with known lags; half the pairs are mismatched."""
    window = args.window or cfg.sync.window
    rng = substream(args.seed, "sync")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for k in range(args.pairs):
        raw = rng.normal(size=(args.frames + 8, args.dim))
        # short box filter gives the features some temporal correlation
        vis = np.stack([raw[i : i + 4].mean(axis=0) for i in range(args.frames)])
        visual = FeatureStream(vis)
        active = k % 2 == 0
        lag_max = window if args.lag_max is None else args.lag_max
        lag = int(rng.integers(-lag_max, lag_max + 1))
        if active:
            audio = synthetic_audio(visual, lag, args.noise, rng)
        else:
            audio = FeatureStream(rng.normal(size=vis.shape))
        write_stream(visual, out / f"pair{k:03d}.visual.txt")
        write_stream(audio, out / f"pair{k:03d}.audio.txt")
        lines.append(f"pair{k:03d}.visual.txt pair{k:03d}.audio.txt {lag} {'active' if active else 'inactive'}")
    (out / "pairs.txt").write_text("\n".join(lines) + "\n")
    params = {"seed": args.seed, "pairs": args.pairs, "frames": args.frames, "dim": args.dim, "noise": args.noise, "window": window}
    write_manifest(out, "gen-sync", cfg, params, {})


def cmd_eval_sync(args, cfg):
    """Pairs file: ``<visual> <audio> <gt offset> <active|inactive>`` per line."""
    window = args.window or cfg.sync.window
    smoothing = args.smoothing or cfg.sync.smoothing
    tol = cfg.sync.tolerance if args.tolerance is None else args.tolerance
    pairs_path = Path(args.pairs)
    base = pairs_path.parent
    preds, gts, tracks = [], [], []
    inputs = {"pairs": pairs_path}
    lines = []
    for lineno, raw in enumerate(pairs_path.read_text().splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 4 or parts[3] not in ("active", "inactive"):
            raise CommandError("input", f"{pairs_path}:{lineno}: expected '<visual> <audio> <offset> <active|inactive>'")
        v, a = read_stream(base / parts[0]), read_stream(base / parts[1])
        inputs[f"visual{lineno}"] = base / parts[0]
        inputs[f"audio{lineno}"] = base / parts[1]
        res = determine_offset(v, a, window)
        if parts[3] == "active":
            # offsets are only defined for streams that belong together
            preds.append(res.offset)
            gts.append(int(parts[2]))
        tracks.append(ScoredTrack(asd_scores(v, a, smoothing).scores, parts[3] == "active"))
        lines.append(f"pair{lineno}.offset={res.offset}")
        lines.append(f"pair{lineno}.boundary={int(res.boundary)}")
    if not tracks:
        raise CommandError("input", "pairs file lists no streams")
    if preds:
        lines.append(f"offset_accuracy={offset_accuracy(preds, gts, tol)!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = {t.active for t in tracks}
    if len(labels) == 2:
        m = classification_metrics(tracks)
        write_metrics(m, out / "asd_metrics.txt", out / "asd_curves.csv")
    (out / "sync_report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, "eval-sync", cfg, {"window": window, "smoothing": smoothing, "tolerance": tol}, inputs)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="facestd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"facestd {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--basis", help="basis file (.mbf)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-basis", parents=[common], help="write a synthetic morphable basis")
    s.add_argument("--out", required=True)
    s.add_argument("--vertices", type=int, default=1500)
    s.add_argument("--dims", type=int, nargs=3, metavar=("D_ID", "D_EXP", "D_TEX"))
    s.set_defaults(func=cmd_gen_basis)

    s = sub.add_parser("gen-scene", parents=[common], help="render ground-truth collections")
    s.add_argument("--out", required=True)
    s.add_argument("--collections", type=int, default=4)
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--landmark-noise", type=float, default=0.0)
    s.set_defaults(func=cmd_gen_scene)

    s = sub.add_parser("synth", parents=[common], help="render one coefficient file")
    s.add_argument("--coef", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--depth", help="also write pseudo-depth to this PGM")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", parents=[common], help="fit every collection of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--collection", action="append", help="restrict to these collection ids")
    s.add_argument("--per-image", action="store_true", help="unconstrained baseline")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("standardize", parents=[common], help="re-render fitted expressions under defaults")
    s.add_argument("--fit")
    s.add_argument("--out", required=True)
    s.add_argument("--beta-zero", action="store_true", help="render only the neutral reference")
    s.set_defaults(func=cmd_standardize)

    s = sub.add_parser("eval-lmd", parents=[common], help="lip LMD with mixed coefficients")
    s.add_argument("--data", required=True, help="dataset with .gt.coef sidecars")
    s.add_argument("--fit", required=True)
    s.add_argument("--select", default="beta", help="attributes taken from the fit, comma separated")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_lmd)

    s = sub.add_parser("gen-sync", parents=[common], help="write toy feature-stream pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=20)
    s.add_argument("--frames", type=int, default=200)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--window", type=int)
    s.add_argument("--lag-max", type=int, help="largest |lag| of active pairs (default: the window)")
    s.set_defaults(func=cmd_gen_sync)

    s = sub.add_parser("eval-sync", parents=[common], help="offset accuracy and ASD metrics")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int)
    s.add_argument("--smoothing", type=int)
    s.add_argument("--tolerance", type=int)
    s.set_defaults(func=cmd_eval_sync)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    msg = " ".join(str(message).split())
    print(f"error: kind={kind} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        if exc.code:
            print("error: kind=usage message=invalid command line", file=sys.stderr)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        args.func(args, cfg)
    except ConfigError as exc:
        key = f" key={exc.key}" if exc.key else ""
        print(f"error: kind=config{key} message={' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except CommandError as exc:
        return _fail(exc.kind, exc, 1)
    except DatasetError as exc:
        return _fail("dataset", exc.report(), 1)
    except (BasisFormatError, SyncError, FitError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
