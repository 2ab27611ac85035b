"""Command-line pipeline: gen -> bake -> train -> eval / render."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .dataset import AnimationSet, gt_occupancy_batch, load_dataset, make_animation, save_dataset
from .errors import ConfigError, IndexOutOfRange, InvalidResolution, IoFailure, NilbsError
from .inverse import BlendCounter
from .occupancy import OccupancyGrid, bake_grid, grid_nodes, write_pgm
from .trainer import (
    TrainConfig,
    evaluate_iou,
    false_positive_mass,
    load_config,
    pose_contexts,
    predict_field,
    train,
)
from .weightnet import WeightNetParams, load_checkpoint


def load_grid(path) -> OccupancyGrid:
    data = geo.load_json(path)
    try:
        return OccupancyGrid.from_dict(data)
    except NilbsError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not a valid occupancy grid: {exc}") from exc


def _checkpoint_for(path, anim: AnimationSet) -> WeightNetParams:
    params = load_checkpoint(path)
    if params.bone_count != anim.rig.bone_count:
        raise ConfigError(f"checkpoint {path} is for {params.bone_count} bones, rig has {anim.rig.bone_count}")
    return params


def _pose_index(anim: AnimationSet, index: int) -> int:
    if not 0 <= index < anim.frames:
        raise IndexOutOfRange(f"pose {index} outside 0..{anim.frames - 1}")
    return index


def cmd_gen(args) -> None:
    save_dataset(make_animation(args.frames, seed=args.seed, stride=args.stride), args.out)


def cmd_bake(args) -> None:
    anim = load_dataset(args.data)
    grid = bake_grid(anim.mesh.xy, anim.bbox_min, anim.bbox_max, (args.res, args.res))
    geo.save_json(grid.to_dict(), args.out)


def cmd_train(args) -> None:
    anim = load_dataset(args.data)
    grid = load_grid(args.grid)
    config = load_config(args.config) if args.config else TrainConfig()
    if args.ablate_ghost:
        config.ghost = False
    init = _checkpoint_for(args.init, anim) if args.init else None
    _, report = train(config, anim, grid, out_dir=args.out, init=init)
    print(f"mean IoU {np.mean(report.final_iou):.4f}  final L_w {report.records[-1].loss_w:.4f}")


def cmd_eval(args) -> None:
    anim = load_dataset(args.data)
    grid = load_grid(args.grid)
    params = _checkpoint_for(args.checkpoint, anim)
    ctx = pose_contexts(anim)
    ious = [evaluate_iou(params, anim, grid, t, args.res, contexts=ctx) for t in range(anim.frames)]
    fp = [false_positive_mass(params, anim, grid, t, args.res, contexts=ctx) for t in range(anim.frames)]
    result = {"iou": ious, "mean_iou": float(np.mean(ious)), "false_positive_mass": fp}
    text = json.dumps(result, indent=1) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    sys.stdout.write(text)


def cmd_render(args) -> None:
    anim = load_dataset(args.data)
    t = _pose_index(anim, args.pose)
    if args.res < 2:
        raise InvalidResolution("--res must be at least 2")
    if args.gt:
        nodes = grid_nodes(anim.bbox_min, anim.bbox_max, (args.res, args.res))
        field = gt_occupancy_batch(anim.mesh, anim.rig, anim.poses[t], nodes.reshape(-1, 2))
        field = field.reshape(args.res, args.res).astype(np.float64)
    else:
        if not (args.checkpoint and args.grid):
            raise ConfigError("render needs --checkpoint and --grid unless --gt is given")
        params = _checkpoint_for(args.checkpoint, anim)
        field = predict_field(params, anim, load_grid(args.grid), t, args.res, counter=BlendCounter())
    write_pgm(field, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nilbs", description="Neural inverse skinning occupancy pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the gingerbread dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=1, help="keep every k-th frame of a frames*k animation")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bake", help="bake the rest-pose occupancy grid")
    p.add_argument("--data", required=True)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("train", help="fit the weight network")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--ablate-ghost", action="store_true", help="pin the ghost channel to zero")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-pose IoU and false-positive mass as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write a PGM of the occupancy field")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--grid")
    p.add_argument("--pose", type=int, default=0)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", action="store_true", help="render ground truth instead")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (NilbsError, ValueError) as exc:
        print(f"nilbs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
