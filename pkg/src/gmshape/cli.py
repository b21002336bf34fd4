"""``gmshape`` command-line interface.

Exit codes: 0 success, 2 bad input (missing/malformed files, invalid
options), 3 numeric failure (divergence, non-positive depth).

Every option may also come from a key=value config file (``--config``).
Keys at the top of the file apply to every command; keys under a
``[fit]``-style section apply to that command only. A flag given on the
command line wins over the config file, which wins over the built-in
default. The resolved values, with their source, are echoed in the run
manifest written next to the primary output.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import ingest
from .camera import DepthError, load_cameras, save_cameras, soft_silhouette, paraperspective_project, write_pgm
from .fitter import INIT_METHODS, FitConfig, FitDivergedError, fit
from .losses import LossConfig
from .metrics import NORMALIZATIONS, EvalReport, chamfer, emd, iou, silhouette_mse
from .mixture import load as load_gmm
from .mixture import sample, save as save_gmm
from .shape_ops import align, reduce
from .surface import extract_mesh, marching_cubes, save_grid, sample_surface, write_obj, write_ply

log = logging.getLogger("gmshape")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object
    help: str
    choices: tuple | None = None


_DEFAULT_FIT = FitConfig()
_DEFAULT_LOSS = LossConfig()

COMMON = [
    Opt("seed", int, 0, "random seed"),
    Opt("threads", int, os.cpu_count() or 1, "worker threads"),
]
TARGET_OPTS = [
    Opt("dims", int, 64, "voxel resolution used when the target is a mesh"),
    Opt("n_points", int, 100_000, "volume points sampled from the target"),
    Opt("normalize", _bool, True, "center mesh inputs and scale their bbox diagonal to 1"),
]
OPTIONS = {
    "fit": COMMON + TARGET_OPTS + [
        Opt("k", int, _DEFAULT_FIT.k, "number of components"),
        Opt("iters", int, _DEFAULT_FIT.iters, "optimizer steps"),
        Opt("lr", float, _DEFAULT_FIT.lr, "Adam learning rate"),
        Opt("cosine_decay", _bool, _DEFAULT_FIT.cosine_decay, "cosine learning-rate decay"),
        Opt("init", str, _DEFAULT_FIT.init, "initialization", INIT_METHODS),
        Opt("init_radius", float, _DEFAULT_FIT.init_radius, "radius of the ball holding initial means"),
        Opt("init_scale", float, _DEFAULT_FIT.init_scale, "initial component standard deviation"),
        Opt("w3d", float, _DEFAULT_LOSS.w_3d, "weight of the 3D likelihood term"),
        Opt("wdist", float, _DEFAULT_LOSS.w_dist, "weight of the distance regularizer"),
        Opt("wsil", float, _DEFAULT_LOSS.w_sil, "weight of the silhouette term"),
        Opt("t_dist", float, _DEFAULT_LOSS.t_dist, "radius T of the distance regularizer"),
        Opt("q", int, _DEFAULT_LOSS.q_points, "Q of the soft silhouette"),
        Opt("n_views", int, _DEFAULT_LOSS.n_views, "views per iteration"),
        Opt("batch", int, _DEFAULT_LOSS.sample_batch, "3D points per iteration"),
    ],
    "mesh": COMMON + [
        Opt("c", float, 1.0, "iso level as a multiple of E[f]"),
        Opt("dims", int, 128, "grid resolution per axis"),
    ],
    "reduce": COMMON + [Opt("k", int, 16, "target component count")],
    "align": COMMON + [Opt("with_scale", _bool, False, "also estimate a uniform scale")],
    "eval": COMMON + [
        Opt("c", float, 1.0, "iso level as a multiple of E[f]"),
        Opt("iou_dims", int, 32, "voxel resolution for IoU when the ground truth is a mesh"),
        Opt("mesh_dims", int, 64, "grid resolution for extracting the mixture surface"),
        Opt("n_points", int, 1024, "surface points for Chamfer and EMD"),
        Opt("normalize", _bool, True, "center and scale a ground-truth mesh like fit does"),
        Opt("cloud_normalize", str, "per-cloud", "unit-cube normalization of point sets", NORMALIZATIONS),
        Opt("emd_method", str, "auto", "EMD solver", ("auto", "exact", "sinkhorn")),
        Opt("q", int, _DEFAULT_LOSS.q_points, "Q of the soft silhouette"),
    ],
    "silhouette": COMMON + [Opt("q", int, _DEFAULT_LOSS.q_points, "Q of the soft silhouette")],
    "sample": COMMON + [Opt("n", int, 10_000, "number of points")],
    "voxelize": COMMON + [
        Opt("dims", int, 64, "grid resolution per axis"),
        Opt("normalize", _bool, True, "center and scale the bbox diagonal to 1 first"),
    ],
    "views": COMMON + [
        Opt("n_views", int, 42, "number of views"),
        Opt("subdivisions", int, 1, "icosphere subdivision level"),
        Opt("distance", float, 0.0, "camera distance (0: bounding-box diagonal)"),
        Opt("normalize", _bool, True, "center and scale the bbox diagonal to 1 first"),
    ],
}


def _read_config(path, command):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string("[__top__]\n" + p.read_text())
    except configparser.Error as exc:
        raise InputError(f"{p}: {exc}") from None
    values = dict(parser["__top__"])
    if parser.has_section(command):
        values.update(parser[command])
    return {k.replace("-", "_"): v for k, v in values.items()}


def _resolve(args, command):
    """Apply flag > config file > default; returns (values, sources)."""
    config = _read_config(args.config, command)
    opts = OPTIONS[command]
    known = {o.name for o in opts}
    unknown = sorted(set(config) - known)
    values, sources = {}, {}
    for o in opts:
        flag = getattr(args, o.name)
        if flag is not None:
            values[o.name], sources[o.name] = flag, "flag"
        elif o.name in config:
            try:
                v = o.type(config[o.name])
            except (ValueError, argparse.ArgumentTypeError):
                raise InputError(f"config key {o.name!r}: bad value {config[o.name]!r}") from None
            if o.choices and v not in o.choices:
                raise InputError(f"config key {o.name!r} must be one of {o.choices}")
            values[o.name], sources[o.name] = v, "config"
        else:
            values[o.name], sources[o.name] = o.default, "default"
    if unknown:
        log.warning("ignoring unknown config keys for %s: %s", command, ", ".join(unknown))
    return values, sources


def _write_manifest(path, command, args, values, sources, inputs, outputs, started):
    doc = {
        "command": command,
        "tool": "gmshape",
        "version": __version__,
        "backend": kernels.BACKEND,
        "config": {k: values[k] for k in sorted(values)},
        "config_source": {k: sources[k] for k in sorted(sources)},
        "seed": values.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.perf_counter() - started, 6),
        "argv": list(args._argv),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _require_file(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {p}")
    return p


def _manifest_path(args, primary):
    return Path(args.manifest) if args.manifest else Path(str(primary) + ".manifest.json")


# Target loading ----------------------------------------------------------------

MESH_EXT = (".obj", ".ply")
GRID_EXT = (".vox", ".grid", ".binvox")


def _load_target(path, v):
    p = _require_file(path)
    ext = p.suffix.lower()
    if ext in MESH_EXT:
        mesh = ingest.load_mesh(p)
        return ingest.target_from_mesh(mesh, v["dims"], v["n_points"], v["seed"], v["normalize"], source=p)
    if ext in GRID_EXT:
        return ingest.target_from_grid(ingest.load_voxels(p), v["n_points"], v["seed"], source=p)
    if ext == ".xyz":
        pts = ingest.load_xyz(p)
        return ingest.ShapeTarget(pts, None, ingest.bbox_diagonal(pts) or 1.0, {"source": str(p)})
    raise InputError(f"{p}: unsupported target type {ext!r} (mesh {MESH_EXT}, voxels {GRID_EXT}, or .xyz)")


def _load_mesh_normalized(path, normalize):
    mesh = ingest.load_mesh(_require_file(path))
    if mesh.is_empty:
        raise InputError(f"{path}: mesh has no triangles")
    if normalize:
        mesh, _, _ = ingest.normalize_mesh(mesh)
    return mesh


def _load_views(path):
    d = Path(path)
    if not d.is_dir():
        raise InputError(f"view directory not found: {d}")
    return ingest.load_view_set(d)


# Commands ---------------------------------------------------------------------------

def cmd_fit(args, v):
    target = _load_target(args.target, v)
    views = _load_views(args.views) if args.views else []
    if v["wsil"] > 0 and not views:
        raise InputError("--wsil > 0 needs --views (or pass --wsil 0)")
    out = Path(args.output or Path(args.target).with_suffix(".gmm"))
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    cfg = FitConfig(k=v["k"], iters=v["iters"], lr=v["lr"], seed=v["seed"], init=v["init"],
                    init_radius=v["init_radius"], init_scale=v["init_scale"],
                    cosine_decay=v["cosine_decay"], threads=v["threads"])
    loss_cfg = LossConfig(t_dist=v["t_dist"], q_points=v["q"], n_views=v["n_views"], sample_batch=v["batch"],
                          w_3d=v["w3d"], w_dist=v["wdist"], w_sil=v["wsil"])
    m, trace = fit(target.points, views, cfg, loss_cfg)
    save_gmm(m, out)
    trace_path.write_text(trace.to_csv())
    log.info("fit: %d components, loss %.6g -> %.6g in %.1fs", m.k, trace.initial_full, trace.final_full,
             trace.wall_clock)
    inputs = [args.target] + ([args.views] if args.views else [])
    return out, [out, trace_path], inputs


def cmd_mesh(args, v):
    m = load_gmm(_require_file(args.gmm))
    mesh = extract_mesh(m, v["c"], v["dims"])
    out = Path(args.output or Path(args.gmm).with_suffix(".obj"))
    if out.suffix.lower() == ".ply":
        write_ply(mesh, out)
    else:
        write_obj(mesh, out)
    print(f"{len(mesh.vertices)} vertices {len(mesh.triangles)} triangles")
    return out, [out], [args.gmm]


def cmd_reduce(args, v):
    m = load_gmm(_require_file(args.gmm))
    if not 1 <= v["k"] <= m.k:
        raise InputError(f"--k must be in [1, {m.k}]")
    r = reduce(m, v["k"])
    out = Path(args.output or Path(args.gmm).with_suffix(f".k{v['k']}.gmm"))
    save_gmm(r, out)
    return out, [out], [args.gmm]


def _fmt(x):
    return format(float(x), ".17g")


def cmd_align(args, v):
    a = load_gmm(_require_file(args.a))
    b = load_gmm(_require_file(args.b))
    res = align(a, b, with_scale=v["with_scale"])
    row = res.transform.as_row()
    print(" ".join(_fmt(x) for x in row) + " " + _fmt(res.residual))
    if res.ambiguous:
        print("warning: near-equal covariance eigenvalues, rotation may be ambiguous", file=sys.stderr)
    doc = {
        "rotation": res.transform.rotation.tolist(),
        "translation": res.transform.translation.tolist(),
        "scale": res.transform.scale,
        "residual": res.residual,
        "ambiguous": res.ambiguous,
        "candidates": [{"row": T.as_row(), "scale": T.scale, "residual": r} for T, r in res.candidates],
    }
    out = Path(args.output or "align.json")
    out.write_text(json.dumps(doc, indent=2) + "\n")
    return out, [out], [args.a, args.b]


def cmd_eval(args, v):
    m = load_gmm(_require_file(args.gmm))
    gt_path = _require_file(args.gt)
    ext = gt_path.suffix.lower()
    if ext in MESH_EXT:
        gt_mesh = _load_mesh_normalized(gt_path, v["normalize"])
        grid = ingest.voxelize_solid(gt_mesh, v["iou_dims"])
    elif ext in GRID_EXT:
        grid = ingest.load_voxels(gt_path)
        grid = type(grid)(grid.dims, grid.origin, grid.spacing, (grid.values > 0.5).astype(np.float64))
        gt_mesh = marching_cubes(grid, 0.5)
    else:
        raise InputError(f"{gt_path}: ground truth must be a mesh {MESH_EXT} or voxel grid {GRID_EXT}")
    if gt_mesh.is_empty:
        raise InputError(f"{gt_path}: ground truth has no surface")
    score_iou = iou(m, grid, v["c"])
    est_mesh = extract_mesh(m, v["c"], v["mesh_dims"])
    if est_mesh.is_empty:
        raise FloatingPointError("mixture iso-surface is empty at this c")
    pa = sample_surface(est_mesh, v["n_points"], v["seed"])
    pb = sample_surface(gt_mesh, v["n_points"], v["seed"] + 1)
    cd = chamfer(pa, pb, v["cloud_normalize"])
    e = emd(pa, pb, v["cloud_normalize"], v["emd_method"])
    sil = float("nan")
    if args.views:
        views = _load_views(args.views)
        sil = float(np.mean([silhouette_mse(soft_silhouette(paraperspective_project(m, cam), v["q"], cam), img)
                             for cam, img in views]))
    report = EvalReport(score_iou, cd, e.value, sil, config={
        "iou_grid_dims": list(grid.dims), "n_points": v["n_points"], "seed": v["seed"], "c": v["c"],
        "cloud_normalize": v["cloud_normalize"], "emd_method": e.method, "emd_gap": e.gap,
        "mesh_dims": v["mesh_dims"]})
    out = Path(args.output or "eval.csv")
    out.write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
    json_path = Path(args.json) if args.json else out.with_suffix(".json")
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.csv_header())
    print(report.csv_row())
    inputs = [args.gmm, args.gt] + ([args.views] if args.views else [])
    return out, [out, json_path], inputs


def cmd_silhouette(args, v):
    m = load_gmm(_require_file(args.gmm))
    cams_path = _require_file(args.cameras)
    cams = load_cameras(cams_path)
    out = Path(args.output or "silhouettes")
    out.mkdir(parents=True, exist_ok=True)
    save_cameras(cams, out / "cameras.txt")
    for i, cam in enumerate(cams):
        write_pgm(soft_silhouette(paraperspective_project(m, cam), v["q"], cam), out / f"{i:03d}.pgm")
    return out, [out], [args.gmm, args.cameras]


def cmd_sample(args, v):
    m = load_gmm(_require_file(args.gmm))
    if v["n"] < 1:
        raise InputError("--n must be >= 1")
    out = Path(args.output or Path(args.gmm).with_suffix(".xyz"))
    ingest.save_xyz(sample(m, v["n"], v["seed"]), out)
    return out, [out], [args.gmm]


def cmd_voxelize(args, v):
    mesh = _load_mesh_normalized(args.mesh, v["normalize"])
    grid, watertight = ingest.voxelize_solid(mesh, v["dims"], return_flag=True)
    if not watertight:
        log.warning("mesh is not watertight; occupancy is a best-effort majority vote")
    out = Path(args.output or Path(args.mesh).with_suffix(".vox"))
    if out.suffix.lower() == ".binvox":
        ingest.save_binvox(grid, out)
    else:
        save_grid(grid, out)
    print(f"{int(grid.values.sum())} occupied voxels of {grid.values.size}")
    return out, [out], [args.mesh]


def cmd_views(args, v):
    mesh = _load_mesh_normalized(args.mesh, v["normalize"])
    distance = v["distance"] or None
    views = ingest.make_view_set(mesh, v["n_views"], v["subdivisions"], v["seed"], distance)
    out = Path(args.output or "views")
    ingest.save_view_set(views, out)
    return out, [out], [args.mesh]


COMMANDS = {
    "fit": (cmd_fit, "fit a mixture to a mesh, voxel grid or point cloud"),
    "mesh": (cmd_mesh, "extract the iso-surface of a mixture as OBJ or PLY"),
    "reduce": (cmd_reduce, "reduce a mixture to fewer components"),
    "align": (cmd_align, "estimate the rigid transform taking mixture B onto A"),
    "eval": (cmd_eval, "IoU, Chamfer, EMD and silhouette error against ground truth"),
    "silhouette": (cmd_silhouette, "render soft silhouettes of a mixture"),
    "sample": (cmd_sample, "draw points from a mixture"),
    "voxelize": (cmd_voxelize, "solid voxelization of a mesh"),
    "views": (cmd_views, "ground-truth silhouettes of a mesh from icosphere viewpoints"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gmshape", description="Gaussian-mixture shape tools.")
    parser.add_argument("--version", action="version", version=f"gmshape {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    positional = {
        "fit": [("target", "mesh (.obj/.ply), voxel grid (.vox/.binvox) or point cloud (.xyz)")],
        "mesh": [("gmm", "mixture file")],
        "reduce": [("gmm", "mixture file")],
        "align": [("a", "reference mixture"), ("b", "mixture to move onto the reference")],
        "eval": [],
        "silhouette": [("gmm", "mixture file")],
        "sample": [("gmm", "mixture file")],
        "voxelize": [("mesh", "mesh file (.obj/.ply)")],
        "views": [("mesh", "mesh file (.obj/.ply)")],
    }
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for arg, h in positional[name]:
            p.add_argument(arg, help=h)
        p.add_argument("-o", "--output", help="primary output path")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--manifest", help="manifest path (default: next to the primary output)")
        p.add_argument("-v", "--verbose", action="store_true")
        for o in OPTIONS[name]:
            kw = {"dest": o.name, "type": o.type, "default": None, "help": f"{o.help} (default: {o.default})"}
            if o.choices:
                kw["choices"] = o.choices
            p.add_argument("--" + o.name.replace("_", "-"), **kw)
        if name == "fit":
            p.add_argument("--views", help="view-set directory (cameras.txt + NNN.pgm)")
            p.add_argument("--trace", help="loss trace CSV path")
        elif name == "eval":
            p.add_argument("--gmm", required=True, help="mixture file")
            p.add_argument("--gt", required=True, help="ground truth mesh or voxel grid")
            p.add_argument("--views", help="view-set directory for silhouette error")
            p.add_argument("--json", help="JSON report path")
        elif name == "silhouette":
            p.add_argument("--cameras", required=True, help="camera list (cameras.txt)")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    func = COMMANDS[args.command][0]
    try:
        values, sources = _resolve(args, args.command)
        if values["threads"] < 1:
            raise InputError("--threads must be >= 1")
        primary, outputs, inputs = func(args, values)
        _write_manifest(_manifest_path(args, primary), args.command, args, values, sources, inputs, outputs,
                        started)
    except (FitDivergedError, DepthError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"gmshape {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"gmshape {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
