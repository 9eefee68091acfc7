"""Command-line surface: synth | fuse | train | infer | eval | ablate.

Every command is a pure function of its inputs, config, and seed; rerunning
one reproduces its output files byte for byte. Usage problems (unknown flags,
missing inputs) exit 2; domain failures exit 1 with a diagnostic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import bundle as bio
from . import pipeline
from .errors import MissingFile, PipelineError
from .learner import DEFAULT_EPOCHS, DEFAULT_LR
from .synth import SynthSpec, synth_bundle
from .types import PipelineConfig

_INT_FIELDS = {"k", "fixed_point_iters", "seed"}
_FLOAT_FIELDS = {"alpha_min", "area_min_frac", "lam", "infer_threshold", "depth_tol_frac"}


def _coerce_config_value(key: str, value):
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    if key == "hidden_widths":
        if isinstance(value, str):
            return tuple(int(v) for v in value.split(",") if v)
        return tuple(int(v) for v in value)
    if key == "prob_mode":
        return str(value)
    raise ValueError(f"unknown config field {key!r}")


def build_config(config_path: str | None, overrides: list[str] | None) -> PipelineConfig:
    """Config file plus --set key=value overrides; 'lambda' aliases 'lam'."""
    fields: dict = {}
    if config_path:
        if not os.path.isfile(config_path):
            raise MissingFile(f"no config file at {config_path}")
        with open(config_path, "r", encoding="utf-8") as fh:
            fields.update(json.load(fh))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        fields[key.strip()] = value.strip()
    if "lambda" in fields:
        fields["lam"] = fields.pop("lambda")
    return PipelineConfig(**{k: _coerce_config_value(k, v) for k, v in fields.items()})


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of pipeline config fields")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        dest="overrides",
        help="override one config field (repeatable)",
    )


def _cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    updates = {}
    for flag, field in (
        ("seed", "seed"),
        ("views", "view_count"),
        ("objects", "num_objects"),
        ("points", "points_per_object"),
        ("target", "target_index"),
        ("hallucination", "hallucination_rate"),
        ("drop_rate", "drop_visible_rate"),
        ("embed_noise", "embed_noise"),
    ):
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    spec = dataclasses.replace(spec, **updates)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for i in range(args.scenes):
        sspec = dataclasses.replace(spec, seed=spec.seed + i)
        scene = synth_bundle(sspec)
        manifest = bio.write_bundle(scene, os.path.join(args.out, f"scene_{i:04d}"))
        print(manifest)
    return 0


def _cmd_fuse(args) -> int:
    cfg = build_config(args.config, args.overrides)
    scene = bio.read_bundle(args.bundle)
    weighting = "uniform" if args.uniform else "attention"
    outcome = pipeline.fuse_scene(scene, cfg, weighting=weighting)
    iou_value = None
    if scene.gt_mask is not None:
        iou_value = pipeline.fused_iou(scene, outcome, threshold=cfg.infer_threshold)
    manifest = bio.write_fused(outcome.fused, outcome.unified, args.out, iou_value)
    print(manifest)
    if iou_value is not None:
        print(f"fused_iou: {iou_value!r}")
    return 0


def _cmd_train(args) -> int:
    cfg = build_config(args.config, args.overrides)
    scene = bio.read_bundle(args.bundle)
    weighting = "uniform" if args.uniform else "attention"
    outcome, state = pipeline.train_scene(
        scene, cfg, epochs=args.epochs, lr=args.lr, hybrid=args.hybrid, weighting=weighting
    )
    manifest = bio.write_checkpoint(state, outcome.unified.q, args.out)
    print(manifest)
    final = state.loss_history[-1]
    print(f"final_loss_total: {final[3]!r}")
    return 0


def _cmd_infer(args) -> int:
    cfg = build_config(args.config, args.overrides)
    scene = bio.read_bundle(args.bundle)
    model, q = bio.read_checkpoint(args.checkpoint)
    result = pipeline.infer_mask(model, scene, q, cfg)
    manifest = bio.write_result(result, scene.scene_id, args.out)
    print(manifest)
    if result.iou_vs_gt is not None:
        print(f"iou_vs_gt: {result.iou_vs_gt!r}")
    return 0


def _cmd_eval(args) -> int:
    rows = []
    for rdir in args.results:
        scene_id, result = bio.read_result(rdir)
        if result.iou_vs_gt is None:
            print(f"error: result {rdir} has no ground-truth IoU", file=sys.stderr)
            return 1
        rows.append((scene_id, float(result.iou_vs_gt)))
    txt_path, _ = bio.write_metrics_report(rows, args.out)
    with open(txt_path, "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def _cmd_ablate(args) -> int:
    cfg = build_config(args.config, args.overrides)
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    if args.hallucination is not None:
        spec = dataclasses.replace(spec, hallucination_rate=args.hallucination)
    seeds = [spec.seed + i for i in range(args.seeds)]
    view_counts = [int(v) for v in args.views.split(",") if v]
    rows = pipeline.ablate(
        spec, seeds, view_counts, cfg, train_epochs=args.train_epochs, lr=args.lr
    )
    txt_path, _ = bio.write_ablate_report(rows, args.out)
    with open(txt_path, "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pl3d",
        description="Multi-view 2D mask fusion into 3D pseudo-labels, "
        "per-point model training, inference, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene bundles")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="JSON generator spec file")
    p.add_argument("--scenes", type=int, default=1, help="number of scenes (seed increments)")
    p.add_argument("--seed", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--target", type=int)
    p.add_argument("--hallucination", type=float)
    p.add_argument("--drop-rate", dest="drop_rate", type=float)
    p.add_argument("--embed-noise", dest="embed_noise", type=float)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fuse", help="fuse view predictions into point pseudo-labels")
    p.add_argument("--bundle", required=True, help="scene bundle directory")
    p.add_argument("--out", required=True)
    p.add_argument("--uniform", action="store_true", help="equal fusion weights (ablation)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("train", help="fit the per-point feature model")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--hybrid", action="store_true", help="add ground-truth supervision")
    p.add_argument("--uniform", action="store_true", help="equal fusion weights (ablation)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="classify points with a trained checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="aggregate per-scene results into a metrics report")
    p.add_argument("--results", nargs="+", required=True, help="result directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="compare fusion variants and view counts")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON generator spec file")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--views", default="2,4,8", help="comma-separated view counts")
    p.add_argument("--hallucination", type=float, help="override the spec's rate")
    p.add_argument("--train-epochs", dest="train_epochs", type=int, default=0)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingFile as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
