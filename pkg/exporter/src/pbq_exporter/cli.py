"""Command line entry point.

`pbq-export export --model <id> --samples N --out file.pbtc` writes one
container and prints the manifest as a JSON line to stdout; diagnostics go
to stderr. Exit code 0 on success, 1 with a message on failure.
"""

from __future__ import annotations

import argparse
import sys

from .export import export_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbq-export",
        description="Dump transformer linear layers and calibration activations",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    export = commands.add_parser(
        "export", help="write <layer>.weight and <layer>.acts tensors to one container"
    )
    export.add_argument("--model", required=True, help="model directory or hub identifier")
    export.add_argument(
        "--samples", type=int, default=512, help="calibration columns per layer"
    )
    export.add_argument("--out", required=True, help="output container path")
    export.add_argument(
        "--seed", type=int, default=0, help="seed for fallback calibration token ids"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export_model(args.model, args.samples, args.out, seed=args.seed)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(manifest.to_json())
    print(f"exported {len(manifest.layers)} layers to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
