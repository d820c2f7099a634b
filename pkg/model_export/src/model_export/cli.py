"""Command-line entry points: `init` a random checkpoint, `export` one.

Exit codes: 0 on success, 1 when a checkpoint cannot be loaded or the
output cannot be written (the cause goes to stderr), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import sys

from model_export.detector import fuse_detector, load_checkpoint, random_detector, save_checkpoint
from model_export.onnx_model import export_detector
from model_export.sidecar import ExportManifest, write_sidecar


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-export",
        description="Convert tiny-detector checkpoints into ONNX + JSON sidecar pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="write a randomly initialized checkpoint")
    init.add_argument("out", help="checkpoint path to create")
    init.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    init.add_argument(
        "--input-size", type=int, default=64,
        help="square input resolution, multiple of 4 (default 64)",
    )
    init.set_defaults(func=cmd_init)

    export = sub.add_parser("export", help="serialize a checkpoint to model + sidecar")
    export.add_argument("checkpoint", help="checkpoint produced by init or training")
    export.add_argument("out", help="model file to write; sidecar lands next to it")
    export.add_argument(
        "--input-size", type=int, default=None,
        help="override the checkpoint's input resolution",
    )
    export.add_argument(
        "--fuse", action="store_true",
        help="fold batch norm into the convolutions before serializing",
    )
    export.add_argument(
        "--mean", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar="M",
        help="per-channel normalization mean recorded in the sidecar",
    )
    export.add_argument(
        "--std", type=float, nargs=3, default=(1.0, 1.0, 1.0), metavar="S",
        help="per-channel normalization std recorded in the sidecar",
    )
    export.set_defaults(func=cmd_export)
    return parser


def cmd_init(args: argparse.Namespace) -> int:
    try:
        model = random_detector(args.seed, args.input_size)
        path = save_checkpoint(model, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote checkpoint {path} (input {model.input_size}, seed {args.seed})")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    try:
        model = load_checkpoint(args.checkpoint, input_size=args.input_size)
        if args.fuse and not model.fused:
            model = fuse_detector(model)
        path = export_detector(model, args.out)
        manifest = ExportManifest(
            input_size=model.input_size, mean=tuple(args.mean), std=tuple(args.std)
        )
        sidecar = write_sidecar(manifest, path)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    variant = "fused" if model.fused else "unfused"
    print(
        f"exported {path} + {sidecar.name} "
        f"(input {model.input_size}, {variant}, {model.num_cells} candidates)"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
