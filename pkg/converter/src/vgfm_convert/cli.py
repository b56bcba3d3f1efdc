"""Command-line interface: convert and verify."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .container import ContainerError
from .convert import ConvertError, convert, verify
from .engine import EngineInvocationError, parse_engine_cmd
from .reference import ReferenceError
from .schedule import ScheduleError, load_schedule

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="vgfm-convert",
                     description="Convert pretrained checkpoints to .vgfm "
                                 "containers and verify them empirically")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="checkpoint -> .vgfm container")
    p.add_argument("--in", dest="source", required=True,
                   help="checkpoint file (.mat or .npz)")
    p.add_argument("--out", required=True, help="output .vgfm path")
    p.add_argument("--mean", help="per-channel means r,g,b when the "
                                  "checkpoint has no normalization metadata")
    p.add_argument("--schedule", help="layer schedule JSON "
                                      "(default: the canonical 36-layer one)")
    p.add_argument("--layout", choices=("hwio", "oihw"), default="hwio",
                   help="source weight axis order (default: hwio)")

    p = sub.add_parser("verify", help="compare engine vs reference outputs")
    p.add_argument("--in", dest="source", required=True, help="checkpoint file")
    p.add_argument("--container", required=True, help=".vgfm container")
    p.add_argument("--image", required=True, help="sample image (.vgt/PNG/PPM)")
    p.add_argument("--engine-cmd", dest="engine_cmd",
                   help="engine command line (default: vgface)")
    p.add_argument("--layers", help="comma-separated layer indices to compare "
                                    "(default: every activation layer)")
    p.add_argument("--report", help="write the JSON report here")
    return parser


def _parse_mean(text):
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise _UsageError(f"--mean must be comma-separated numbers, got {text!r}")


def _parse_layers(text):
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise _UsageError(f"--layers must be comma-separated integers, got {text!r}")


def cmd_convert(args) -> int:
    schedule = load_schedule(args.schedule) if args.schedule else None
    header = convert(args.source, args.out, mean=_parse_mean(args.mean),
                     schedule=schedule, layout=args.layout)
    convs = sum(1 for l in header["layers"] if l["kind"] == "conv")
    print(f"wrote {args.out}: {len(header['layers'])} layers, "
          f"{convs} conv blobs", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify(args.source, args.container, args.image,
                    parse_engine_cmd(args.engine_cmd),
                    layers=_parse_layers(args.layers))
    for row in report["layers"]:
        print(f"layer {row['layer']:>3} {row['name']:<12} "
              f"length {row['length']:>8}  max|diff| {row['max_abs_diff']:.3e}")
    print(f"overall max|diff| {report['max_abs_diff']:.3e}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
        print(f"wrote {args.report}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "convert":
            return cmd_convert(args)
        return cmd_verify(args)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ContainerError, ConvertError, EngineInvocationError,
            ReferenceError, ScheduleError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
