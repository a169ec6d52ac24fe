"""Command-line entry point: bagofviews {scan,refine,plan-nbv,reconstruct,eval,sweep}."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import MISSING, fields

from . import pipeline
from .config import RunConfig, load_config
from .geometry import ConfigError
from .io import DatasetError
from .bov import RefineError
from .renderer import make_procedural_scene


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s}")


def _optional(conv):
    def parse(s):
        return None if s.lower() in ("none", "null") else conv(s)
    return parse


def _converter(f):
    t = str(f.type)
    if t.startswith("bool"):
        return _bool, {}
    if t.startswith("int"):
        return (_optional(int) if "None" in t else int), {}
    if t.startswith("float"):
        return (_optional(float) if "None" in t else float), {}
    if t.startswith("list"):
        return int, {"nargs": "+"}
    if t.startswith("dict"):
        return json.loads, {}
    return str, {}


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration; flags below override it")
    g = p.add_argument_group("run configuration")
    for f in fields(RunConfig):
        conv, extra = _converter(f)
        default = f.default if f.default is not MISSING else f.default_factory()
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=conv, default=None,
                       help=f"(default: {default})", **extra)


def config_from_args(args) -> RunConfig:
    over = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, over)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bagofviews", description="Bag-of-Views view selection and NBV workbench")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("scan", help="render the hemisphere scan plan to a dataset")
    p.add_argument("--out", required=True)
    add_config_flags(p)

    p = sub.add_parser("refine", help="offline view selection over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="descriptor cache directory (default: OUT/cache)")
    p.add_argument("--baseline", help="baseline point cloud PLY; skips the all-view reconstruction")
    add_config_flags(p)

    p = sub.add_parser("plan-nbv", help="greedy next-best-view episode")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", help="baseline point cloud PLY; skips rendering the full scan")
    add_config_flags(p)

    p = sub.add_parser("reconstruct", help="TSDF fusion of a dataset or a replayed episode log")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset")
    src.add_argument("--episode", help="episode log; views are re-rendered from the configured scene")
    p.add_argument("--ids", help="file of view ids (one per line) to fuse")
    p.add_argument("--out", required=True)
    add_config_flags(p)

    p = sub.add_parser("eval", help="compare two PLY reconstructions")
    p.add_argument("recon_a")
    p.add_argument("recon_b")
    p.add_argument("--report", help="write the JSON report here")
    add_config_flags(p)

    p = sub.add_parser("sweep", help="refine over the N x W grid and emit one table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="descriptor cache directory (default: OUT/cache)")
    add_config_flags(p)
    return ap


def run(args) -> pipeline.CommandResult:
    cfg = config_from_args(args)
    if args.verb == "scan":
        res = pipeline.cmd_scan(cfg, args.out)
        print(f"views: {res.summary['view_count']}")
    elif args.verb == "refine":
        res = pipeline.cmd_refine(args.dataset, cfg, args.out, args.cache, args.baseline)
        print(f"selected {res.summary['selected']} of {res.summary['views']} views")
    elif args.verb == "plan-nbv":
        res = pipeline.cmd_plan_nbv(cfg, args.out, args.baseline)
        print(f"captured {res.summary['views']} views, total reward {res.summary['total_reward']:.4f}")
    elif args.verb == "reconstruct":
        res = pipeline.cmd_reconstruct(cfg, args.out, args.dataset, args.ids, args.episode)
        print(f"fused {res.summary['views']} views: {res.summary['vertices']} vertices, {res.summary['points']} points")
    elif args.verb == "eval":
        eps = cfg.eps
        if eps is None:
            scene = make_procedural_scene(cfg.scene_spec(), cfg.scene_seed)
            eps = 2.0 * pipeline.new_volume(cfg, scene.bounding_radius).voxel_size
        res = pipeline.cmd_eval(args.recon_a, args.recon_b, eps, args.report)
    else:
        res = pipeline.cmd_sweep(args.dataset, cfg, args.out, args.cache)
        print(pipeline.format_table(res.summary["rows"]))
    d = res.summary
    if {"hausdorff_cm", "chamfer_cm", "coverage"} <= set(d):
        print(f"hausdorff {d['hausdorff_cm']:.4f} cm  chamfer {d['chamfer_cm']:.4f} cm  coverage {d['coverage']:.4f}")
    return res


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        res = run(args)
    except (ConfigError, DatasetError, RefineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failed = [name for name, ok in res.checks if not ok]
    for name in failed:
        print(f"invariant failed: {name}", file=sys.stderr)
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
