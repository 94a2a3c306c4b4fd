"""Command-line front end.

Subcommands: anchors, variance, synth, train, eval, bev.  Exit codes:
0 on success, 2 for usage errors, 3 for data errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import train as train_mod
from .anchors import (
    DistanceFormat,
    build_bbox_anchor_set,
    build_distance_anchor_set,
    cluster_variance_report,
    format_anchor_file,
    parse_anchor_file,
)
from .data import (
    SynthConfig,
    generate_synthetic_scene,
    load_dataset,
    parse_kitti_label,
    read_frame_list,
    save_dataset,
    usable_objects,
)
from .errors import ConfigError, DomainError, ParseError
from .geometry import distance_of
from .metrics import compute_depth_metrics, extract_predictions, format_metrics_table
from .plots import bev_svg, svg_line_plot

USAGE_ERROR, DATA_ERROR = 2, 3


def _add_common(p, labels=True, calib=False):
    if labels:
        p.add_argument("--labels", required=True, help="directory of KITTI label files")
    if calib:
        p.add_argument("--calib", required=True, help="directory of KITTI calib files")
    p.add_argument("--frames", help="file listing frame stems to use (default: all)")
    p.add_argument("--category", default="Car", help="object category to keep (default Car)")
    p.add_argument("--seed", type=int, default=0)


def _load_labels(args):
    labels_dir = Path(args.labels)
    frames = read_frame_list(args.frames) if args.frames else None
    if frames is None:
        frames = sorted(p.stem for p in labels_dir.glob("*.txt"))
    objects = []
    for stem in frames:
        path = labels_dir / f"{stem}.txt"
        if not path.exists():
            raise ParseError(f"missing label file {path}")
        objects.extend(_filter(parse_kitti_label(path.read_text()), args.category))
    if not objects:
        raise DomainError("no usable labeled objects found")
    return objects


def _filter(objects, category):
    keep = []
    for o in objects:
        if category not in ("*", "") and o.category != category:
            continue
        if o.location[2] <= 0 or min(o.dims) <= 0:
            continue
        keep.append(o)
    return keep


def _load_scenes(args):
    frames = read_frame_list(args.frames) if args.frames else None
    scenes = load_dataset(args.labels, args.calib, frames)
    if not scenes:
        raise DomainError("no frames found")
    return scenes


def _apply_config_file(cfg, path):
    """Overlay key=value lines from a plain config file onto a dataclass."""
    import ast

    names = {f.name for f in dataclass_fields(cfg)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in names:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            parsed = ast.literal_eval(value)
        except (SyntaxError, ValueError):
            parsed = value
        setattr(cfg, key, parsed)
    type(cfg).__post_init__(cfg)
    return cfg


# ---------------------------------------------------------------------------
# anchors


def _anchor_table(objects, k, seed, restarts) -> str:
    dists = [distance_of(o.location) for o in objects]
    lines = [f"anchor report over {len(objects)} objects, k={k}", ""]
    lines.append("anchor distances (m) per format, ascending:")
    per_format = {}
    for fmt in DistanceFormat:
        aset = build_distance_anchor_set(objects, k, fmt, seed, restarts)
        per_format[fmt] = aset
        row = " ".join(f"{a:8.2f}" for a in aset.anchors)
        lines.append(f"  {fmt.value:>8}: {row}")
    bset = build_bbox_anchor_set(objects, k, seed, restarts)
    row = " ".join(f"{a:8.2f}" for a in bset.anchors)
    lines.append(f"  {'avr dist':>8}: {row}  (2D box grouping)")
    lines.append("")
    lines.append("average boxes (h/w px) per grouping, nearest group first:")
    for fmt, aset in per_format.items():
        row = " ".join(f"{h:6.1f}/{w:<6.1f}" for h, w in aset.avg_boxes)
        lines.append(f"  {fmt.value:>8}: {row}")
    row = " ".join(f"{h:6.1f}/{w:<6.1f}" for h, w in bset.avg_boxes)
    lines.append(f"  {'box(IoU)':>8}: {row}")
    return "\n".join(lines) + "\n"


def cmd_anchors(args) -> int:
    objects = _load_labels(args)
    fmt = DistanceFormat.parse(args.format)
    aset = build_distance_anchor_set(objects, args.k, fmt, args.seed, args.restarts)
    Path(args.out).write_text(format_anchor_file(aset))
    report = _anchor_table(objects, args.k, args.seed, args.restarts)
    if args.report:
        Path(args.report).write_text(report)
    else:
        print(report, end="")
    print(f"wrote anchor set ({fmt.value}, k={args.k}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# variance


def cmd_variance(args) -> int:
    objects = _load_labels(args)
    fmt = DistanceFormat.parse(args.format)
    ks = [int(s) for s in args.k_list.split(",") if s.strip()]
    lines = [f"within-group distance variance (m^2), {len(objects)} objects", ""]
    lines.append(f"{'k':>3} {'order':>6} {'2D box grouping':>16} {'distance grouping':>18}")
    for k in ks:
        by_box = cluster_variance_report(objects, k, "bbox", fmt, args.seed, args.restarts)
        by_dist = cluster_variance_report(objects, k, "distance", fmt, args.seed, args.restarts)
        for order, (b, d) in enumerate(zip(by_box.clusters, by_dist.clusters), start=1):
            lines.append(f"{k:>3} {order:>6} {b.variance:>16.2f} {d.variance:>18.2f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    cfg = SynthConfig()
    if args.config:
        _apply_config_file(cfg, args.config)
    scenes = [generate_synthetic_scene(args.seed + i, cfg) for i in range(args.scenes)]
    save_dataset(args.out, scenes, images=args.images)
    n_objects = sum(len(s.objects) for s in scenes)
    print(f"wrote {args.scenes} scenes ({n_objects} objects) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _train_config_from_args(args) -> train_mod.TrainConfig:
    cfg = train_mod.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lam=args.lam,
        seed=args.seed,
        k=args.k,
        format=args.format,
        stride=args.stride,
        resolution=args.resolution,
        hidden=args.hidden,
        assignment=train_mod.assignment_rule_for_variant(args.variant),
    )
    if args.config:
        _apply_config_file(cfg, args.config)
    return cfg


def cmd_train(args) -> int:
    scenes = _load_scenes(args)
    config = _train_config_from_args(args)
    objects = []
    for s in scenes:
        objects.extend(usable_objects(s, (args.category,)))
    if len(objects) < config.k:
        raise DomainError(f"need at least k={config.k} objects, found {len(objects)}")
    if args.anchors:
        aset = parse_anchor_file(Path(args.anchors).read_text())
        if aset.k != config.k:
            raise ConfigError(f"anchor file k={aset.k} != --k {config.k}")
    else:
        aset = train_mod.build_variant_anchor_set(objects, args.variant, config, args.restarts)
    result = train_mod.train(scenes, aset, config, (args.category,))
    train_mod.save_checkpoint(args.out, result.model, aset, config)
    if args.history:
        Path(args.history).write_text(train_mod.history_to_csv(result.history))
    last = result.history[-1]
    print(f"trained {args.variant} for {config.epochs} epochs; final loss {last.total:.4f}")
    print(f"wrote checkpoint to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _parse_method(spec: str):
    if "=" in spec:
        name, path = spec.split("=", 1)
    else:
        name, path = Path(spec).stem, spec
    return name, path


def cmd_eval(args) -> int:
    scenes = _load_scenes(args)
    rows = []
    bin_series = {}
    for spec in args.ckpt:
        name, path = _parse_method(spec)
        if path == "gt":
            gt_z = np.array(
                [o.location[2] for s in scenes for o in usable_objects(s, (args.category,))]
            )
            if len(gt_z) == 0:
                raise DomainError("no usable objects for gt evaluation")
            rows.append((name, compute_depth_metrics(gt_z, gt_z)))
            continue
        model, aset, config = train_mod.load_checkpoint(path)
        result = train_mod.evaluate_model(model, scenes, aset, config, (args.category,))
        rows.append((name, result.metrics))
        bin_series[name] = (
            (result.bins.edges[:-1] + result.bins.edges[1:]) / 2.0,
            result.bins.mean_abs_z,
        )
    table = format_metrics_table(rows)
    if args.out:
        Path(args.out).write_text(table)
    else:
        print(table, end="")
    if args.bins_svg:
        if not bin_series:
            raise DomainError("no checkpoint methods to plot")
        Path(args.bins_svg).write_text(
            svg_line_plot(
                bin_series,
                xlabel="ground-truth distance (m)",
                ylabel="mean |z error| (m)",
                title="depth error vs distance",
            )
        )
    return 0


# ---------------------------------------------------------------------------
# bev


def cmd_bev(args) -> int:
    frames = [args.frame] if args.frame else None
    scenes = load_dataset(args.labels, args.calib, frames)
    if not scenes:
        raise DomainError("no frames found")
    scene = scenes[0]
    model, aset, config = train_mod.load_checkpoint(args.ckpt)
    decoded, boxed = train_mod.predict_scene(model, scene, aset, config)
    boxed.objects = usable_objects(boxed, (args.category,))
    pairs, _ = extract_predictions(decoded, boxed, aset, config.grid())
    gt_objects = usable_objects(scene, (args.category,))
    estimates = [loc for _, loc in pairs]
    Path(args.out).write_text(bev_svg(gt_objects, estimates))
    print(f"wrote bird-eye view ({len(gt_objects)} objects) to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchordist",
                                     description="anchor-distance multi-object distance estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anchors", help="cluster distances into an anchor set")
    _add_common(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--format", default="squared", choices=["normal", "log", "squared"])
    p.add_argument("--restarts", type=int, default=25)
    p.add_argument("--out", required=True, help="anchor set file to write")
    p.add_argument("--report", help="write the anchor tables here instead of stdout")
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("variance", help="within-group distance variance report")
    _add_common(p)
    p.add_argument("--k-list", default="2,3,5")
    p.add_argument("--format", default="normal", choices=["normal", "log", "squared"])
    p.add_argument("--restarts", type=int, default=25)
    p.add_argument("--out")
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", action="store_true", help="also write rendered PGM images")
    p.add_argument("--config", help="key=value overrides for the scene generator")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a desk-scale model")
    _add_common(p, calib=True)
    p.add_argument("--variant", default="anchor-distance", choices=list(train_mod.VARIANTS))
    p.add_argument("--anchors", help="anchor set file (default: cluster the training labels)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--format", default="squared", choices=["normal", "log", "squared"])
    p.add_argument("--restarts", type=int, default=25)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--resolution", type=int, default=416)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--config", help="key=value overrides for the train config")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--history", help="CSV of per-epoch losses")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="depth metrics for trained checkpoints")
    _add_common(p, calib=True)
    p.add_argument("--ckpt", action="append", required=True,
                   help="NAME=PATH checkpoint (repeatable); PATH 'gt' scores ground truth")
    p.add_argument("--out", help="metrics table file (default: stdout)")
    p.add_argument("--bins-svg", help="SVG plot of binned |z error| per method")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bev", help="bird-eye-view SVG of one frame")
    _add_common(p, calib=True)
    p.add_argument("--frame", help="frame stem (default: first frame)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bev)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
