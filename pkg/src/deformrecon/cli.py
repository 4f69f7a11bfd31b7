"""Command-line surface.

Commands: synth, densify, train, eval, mesh, visualize, pipeline.
Shared flags (--config, --seed, --out, --ablate, --scene, --tracks) override
config-file values. Exit codes: 0 success, 1 config/validation, 2 numeric
failure, 3 I/O or malformed files.
"""

from __future__ import annotations

import argparse
import sys

from .config import (ConfigError, RunConfig, load_config, require_scene,
                     resolve_tracks_path, validate_values)
from .trainer import NanLossError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--ablate", type=float, metavar="P",
                   help="clear each deform-net input point with probability P during training")
    p.add_argument("--scene", help="override the scene directory")
    p.add_argument("--tracks", help="override the track file ('oracle' = scene tracks)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deformrecon",
        description="Track-conditioned deformation fields for RGBD sequences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    _common_flags(p)

    p = sub.add_parser("densify", help="densify a track file to per-frame PFMs")
    _common_flags(p)
    p.add_argument("--height", type=int, help="target image height")
    p.add_argument("--width", type=int, help="target image width")

    p = sub.add_parser("train", help="train the field bundle on the training split")
    _common_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes metrics.json")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test", "all"))

    p = sub.add_parser("mesh", help="extract the canonical (or posed) mesh as PLY")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, help="pose the mesh at this frame")
    p.add_argument("--resolution", type=int, help="marching cubes cells per axis")

    p = sub.add_parser("visualize", help="color-encoded mesh + 2D heatmap for a frame")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, required=True)

    p = sub.add_parser("pipeline", help="synth (if needed) + densify + train + eval + visualize")
    _common_flags(p)

    return parser


def make_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.scene is not None:
        cfg.scene = args.scene
    if args.tracks is not None:
        cfg.tracks = args.tracks
    if args.ablate is not None:
        if not (0.0 <= args.ablate <= 1.0):
            raise ConfigError(f"ablate: probability {args.ablate} outside [0, 1]")
        cfg.train.p_clear = args.ablate
    validate_values(cfg)
    return cfg


def run_command(args) -> int:
    from . import pipeline

    cfg = make_config(args)
    if args.command == "synth":
        path = pipeline.run_synth(cfg)
        print(f"scene written to {path}")
    elif args.command == "densify":
        if cfg.tracks == "oracle":
            require_scene(cfg)
        height = args.height if args.height is not None else cfg.image_height
        width = args.width if args.width is not None else cfg.image_width
        out = pipeline.run_densify(resolve_tracks_path(cfg), height, width,
                                   f"{cfg.out}/dense_field")
        print(f"dense fields written to {out}")
    elif args.command == "train":
        require_scene(cfg)
        resolve_tracks_path(cfg)
        ckpt = pipeline.run_train(cfg)
        print(f"checkpoint written to {ckpt}")
    elif args.command == "eval":
        require_scene(cfg)
        if args.split is not None:
            cfg.eval_split = args.split
        report = pipeline.run_eval(cfg, args.checkpoint)
        print(report.table())
        print(f"report written to {cfg.out}/metrics.json")
    elif args.command == "mesh":
        require_scene(cfg)
        if args.resolution is not None:
            if args.resolution < 8:
                raise ConfigError("mesh.resolution: must be at least 8")
            cfg.mesh_resolution = args.resolution
        path = pipeline.run_mesh(cfg, args.checkpoint, frame=args.frame)
        print(f"mesh written to {path}")
    elif args.command == "visualize":
        require_scene(cfg)
        ply, png = pipeline.run_visualize(cfg, args.checkpoint, args.frame)
        print(f"visualization written to {ply} and {png}")
    elif args.command == "pipeline":
        report = pipeline.run_pipeline(cfg)
        print(report.table())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NanLossError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
