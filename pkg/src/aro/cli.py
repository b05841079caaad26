"""Command-line front end: ``aro <subcommand> [options]``.

Every run writes ``<output>.manifest.json`` next to its primary output. The
manifest records the merged configuration, the seed, a SHA-256 of each output
file and the wall time. Passing a manifest back through ``--config`` repeats
the run, and the outputs come out byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

EXIT_FAILURE = 1
_META_KEYS = {"command", "config", "func"}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(args, outputs, wall: float, extra: dict | None = None) -> Path:
    outputs = [Path(p) for p in outputs]
    path = outputs[0].with_name(outputs[0].name + ".manifest.json")
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _META_KEYS}
    doc = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "seed_rule": "run seed feeds the single seeded component; internal streams via SeedSequence(seed).spawn",
        "outputs": {p.name: _sha256(p) for p in outputs},
        "wall_time_s": wall,
    }
    if extra:
        doc["results"] = extra
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_config(path: str) -> dict:
    """``key = value`` lines (``#`` comments), or the ``config`` block of a manifest."""
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        cfg = json.loads(text).get("config", {})
        return {k: v for k, v in cfg.items() if v is not None}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _deg(s) -> float:
    return float(np.deg2rad(float(s)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_anchors(args):
    from .anchors import make_anchors, write_anchors

    seed = args.seed if args.strategy in ("uniform", "grid") else None
    a = make_anchors(args.strategy, args.m, 0 if seed is None else seed)
    write_anchors(args.output, a)
    return [args.output], {"m": a.m}


def _load_anchors(path):
    from .anchors import read_anchors

    return read_anchors(path)


def cmd_encode(args):
    from .io import read_cloud, read_xyz
    from .observation import extract_aro_batch, write_encoding
    from .spatial import SpatialIndex

    index = SpatialIndex(read_cloud(args.cloud))
    batch = extract_aro_batch(index, _load_anchors(args.anchors), read_xyz(args.queries).points,
                              _deg(args.half_angle), args.k)
    write_encoding(args.output, batch)
    return [args.output], {"queries": batch.shape[0]}


def _grid_from_labels(lg):
    from .field import OccupancyGrid

    return OccupancyGrid(lg.origin, float(lg.spacing[0]), lg.inside.astype(np.float64))


def _maybe_mesh(args, grid, outputs):
    from .field import marching_cubes
    from .io import write_obj

    if args.mesh_out:
        mesh = marching_cubes(grid, args.iso)
        write_obj(args.mesh_out, mesh)
        outputs.append(args.mesh_out)


def cmd_oracle(args):
    from . import visibility as vis
    from .field import write_grid
    from .io import read_obj

    mesh = read_obj(args.mesh)
    A = _load_anchors(args.anchors).positions
    cls = vis.classify_anchors(mesh, A, seed=args.seed)
    box = vis.default_box(mesh, A)
    res = (args.res,) * 3
    if args.mode == "auto":
        kinds = set(cls.tolist())
        mode = ("interior" if kinds == {vis.AnchorClass.INTERIOR} else
                "exterior" if kinds == {vis.AnchorClass.EXTERIOR} else "mixed")
    else:
        mode = args.mode
    if mode == "mixed":
        lg = vis.oracle_occupancy_mixed(mesh, A, res, box, cls)
    else:
        fn = vis.oracle_occupancy_interior if mode == "interior" else vis.oracle_occupancy_exterior
        inside = fn(mesh, A, vis.cell_centers(box, res), box).reshape(res)
        lg = vis.LabeledGrid(box, res, np.where(inside, vis.Label.INSIDE, vis.Label.OUTSIDE),
                             np.zeros(res, np.int8))
    grid = _grid_from_labels(lg)
    write_grid(args.output, grid)
    outputs = [args.output]
    _maybe_mesh(args, grid, outputs)
    return outputs, {"mode": mode, "inside_cells": int(lg.inside.sum())}


def cmd_heuristic(args):
    from .field import evaluate_grid, write_grid
    from .geometry import Aabb
    from .io import read_cloud
    from .observation import heuristic_occupancy_batch
    from .spatial import SpatialIndex

    index = SpatialIndex(read_cloud(args.cloud))
    anchors = _load_anchors(args.anchors)
    half, k = _deg(args.half_angle), args.k

    def occ(X):
        return heuristic_occupancy_batch(index, anchors, X, half, k).astype(np.float64)

    grid = evaluate_grid(occ, Aabb.cube(args.extent), args.res, chunk=1 << 20)
    write_grid(args.output, grid)
    outputs = [args.output]
    _maybe_mesh(args, grid, outputs)
    return outputs, {"inside_samples": int(grid.values.sum())}


def _load_shape(spec: str):
    from .nn2d.shapes import disk, letter_g, read_shape

    builtin = {"disk": disk, "letter": letter_g}
    return builtin[spec]() if spec in builtin else read_shape(spec)


def cmd_train2d(args):
    from .anchors import ring_anchors_2d
    from .nn2d.net import NetConfig
    from .nn2d.train import TrainConfig, save_model, train

    shapes = [_load_shape(s) for s in args.shape]
    A = (_load_anchors(args.anchors).positions if args.anchors else ring_anchors_2d(args.m).positions)
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                      n_samples=args.n_samples, subset_prob=args.subset_prob,
                      net=NetConfig(4, args.d_model, args.heads, args.d_ff, args.layers))
    res = train(shapes, A, cfg)
    save_model(args.output, res.params, A)
    return [args.output], {"final_loss": res.losses[-1], "losses": res.losses}


def cmd_infer2d(args):
    from .field import write_pgm
    from .nn2d.train import image_iou, load_model, rasterize, reconstruct_image

    params, A, box = load_model(args.model)
    shape = _load_shape(args.shape)
    img = reconstruct_image(params, shape, A, args.res, box)
    write_pgm(args.output, img)
    return [args.output], {"iou": image_iou(img >= args.iso, rasterize(shape, args.res, box))}


def cmd_activation(args):
    from .field import write_pgm
    from .nn2d.train import anchor_activation_map, load_model

    params, A, box = load_model(args.model)
    img = anchor_activation_map(params, _load_shape(args.shape), A, args.anchor, args.res, box)
    write_pgm(args.output, img)
    return [args.output], {"anchor": args.anchor}


def cmd_eval(args):
    from .field import marching_cubes, read_grid
    from .io import read_obj
    from .metrics import evaluate_meshes

    gt = read_obj(args.gt)
    recon_inside = None
    if args.recon.endswith(".grid"):
        grid = read_grid(args.recon)
        recon = marching_cubes(grid, args.iso)

        def recon_inside(X):
            inb = grid.bounds.contains(X)
            return inb & (grid.sample_nearest(X) >= args.iso)
    else:
        recon = read_obj(args.recon)
    report = evaluate_meshes(recon, gt, args.samples, args.seed, recon_inside=recon_inside, n_iou=args.iou_samples)
    Path(args.output).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [args.output], {"iou": report.iou}


def cmd_bench(args):
    from .anchors import layered_fibonacci
    from .observation import extract_aro_batch
    from .spatial import SpatialIndex

    rng = np.random.Generator(np.random.PCG64(args.seed))
    d = rng.standard_normal((args.points, 3))
    cloud = 0.4 * d / np.linalg.norm(d, axis=1, keepdims=True)
    Q = rng.uniform(-0.5, 0.5, (args.queries, 3))
    index = SpatialIndex(cloud)
    anchors = layered_fibonacci(args.m)
    extract_aro_batch(index, anchors, Q[:8], _deg(args.half_angle), args.k)  # compile and warm up
    t = time.perf_counter()
    extract_aro_batch(index, anchors, Q, _deg(args.half_angle), args.k)
    dt = time.perf_counter() - t
    result = {"queries": args.queries, "points": args.points, "m": args.m, "k": args.k,
              "seconds": dt, "queries_per_second": args.queries / dt}
    print(json.dumps(result, sort_keys=True))
    Path(args.output).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [args.output], result


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aro", description="Anchored radial observation toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_, output):
        s = sub.add_parser(name, help=help_, description=help_)
        s.set_defaults(func=func)
        s.add_argument("--config", help="key=value file (or a manifest) with defaults; flags win")
        s.add_argument("--seed", type=int, default=0, help="run-level seed (default 0)")
        s.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")
        s.add_argument("-o", "--output", default=output, help=f"output path (default {output})")
        return s

    s = add("anchors", cmd_anchors, "Place anchors and write them as text.", "anchors.txt")
    s.add_argument("--m", type=int, default=48)
    s.add_argument("--strategy", choices=["fibonacci", "uniform", "grid", "ring2d"], default="fibonacci")

    def cone(s, angle=24.0, k=16):
        s.add_argument("--half-angle", type=float, default=angle, help=f"cone half-angle in degrees ({angle:g})")
        s.add_argument("--k", type=int, default=k)

    s = add("encode", cmd_encode, "Encode queries against a point cloud.", "aro.bin")
    s.add_argument("--cloud", required=True)
    s.add_argument("--anchors", required=True)
    s.add_argument("--queries", required=True)
    cone(s)

    s = add("oracle", cmd_oracle, "Exact occupancy grid of a watertight mesh from anchor visibility.", "oracle.grid")
    s.add_argument("--mesh", required=True)
    s.add_argument("--anchors", required=True)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--mode", choices=["auto", "interior", "exterior", "mixed"], default="auto")
    s.add_argument("--mesh-out", default=None, help="also write the iso-surface as OBJ")
    s.add_argument("--iso", type=float, default=0.5)

    s = add("heuristic", cmd_heuristic, "Occupancy grid of a point cloud from exterior anchors.", "heuristic.grid")
    s.add_argument("--cloud", required=True)
    s.add_argument("--anchors", required=True)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--extent", type=float, default=0.5, help="grid covers [-extent, extent]^3")
    s.add_argument("--mesh-out", default=None)
    s.add_argument("--iso", type=float, default=0.5)
    cone(s, 10.0, 16)

    s = add("train2d", cmd_train2d, "Train the 2D network on one or more shapes.", "model.bin")
    s.add_argument("--shape", required=True, action="append", help="polygon file, 'disk' or 'letter'")
    s.add_argument("--m", type=int, default=7)
    s.add_argument("--anchors", default=None, help="2D anchor file (default: ring placement)")
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--n-samples", type=int, default=20_000)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--lr", type=float, default=3e-4)
    s.add_argument("--subset-prob", type=float, default=0.0)
    s.add_argument("--d-model", type=int, default=64)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--d-ff", type=int, default=128)
    s.add_argument("--layers", type=int, default=3)

    for name, func, help_, out in (("infer2d", cmd_infer2d, "Reconstruct an image with a trained model.", "recon.pgm"),
                                   ("activation", cmd_activation, "Single-anchor activation map.", "activation.pgm")):
        s = add(name, func, help_, out)
        s.add_argument("--model", required=True)
        s.add_argument("--shape", required=True)
        s.add_argument("--res", type=int, default=128)
        if name == "activation":
            s.add_argument("--anchor", type=int, required=True)
        else:
            s.add_argument("--iso", type=float, default=0.5)

    s = add("eval", cmd_eval, "Compare a reconstruction (.obj or .grid) to a ground-truth mesh.", "report.json")
    s.add_argument("--recon", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--iou-samples", type=int, default=100_000)
    s.add_argument("--iso", type=float, default=0.5)

    s = add("bench", cmd_bench, "Time encoding throughput on a synthetic sphere cloud.", "bench.json")
    s.add_argument("--points", type=int, default=10_000)
    s.add_argument("--queries", type=int, default=10_000)
    s.add_argument("--m", type=int, default=48)
    cone(s)
    return p


def _prescan(argv):
    """Subcommand name and ``--config`` value, found before the real parse."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _parse(parser, argv):
    command, config = _prescan(argv)
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if config is None or sub is None:
        return parser.parse_args(argv)
    try:
        cfg = _read_config(config)
    except (OSError, ValueError) as e:
        sub.error(f"cannot read config: {e}")
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(actions) - _META_KEYS)
    if unknown:
        sub.error(f"unknown config keys: {', '.join(unknown)}")
    cfg = {k: v for k, v in cfg.items() if k not in _META_KEYS}
    # repeatable flags from the command line replace the file's list instead of extending it
    appended = {k: v for k, v in cfg.items() if isinstance(actions[k], argparse._AppendAction)}
    sub.set_defaults(**{k: v for k, v in cfg.items() if k not in appended})
    for k in cfg:
        actions[k].required = False
    args = parser.parse_args(argv)
    for k, v in appended.items():
        if getattr(args, k) is None:
            setattr(args, k, v if isinstance(v, list) else [s.strip() for s in str(v).split(",")])
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = _parse(parser, sys.argv[1:] if argv is None else list(argv))
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    t0 = time.perf_counter()
    try:
        outputs, extra = args.func(args)
        _write_manifest(args, outputs, time.perf_counter() - t0, extra)
    except (OSError, ValueError, FloatingPointError, RuntimeError, KeyError) as e:
        print(f"aro {args.command}: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
