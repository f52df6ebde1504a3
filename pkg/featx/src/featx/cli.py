"""Command-line front end: ``featx extract`` and ``featx verify``."""

import argparse
import logging
import sys
from pathlib import Path

from featx.errors import BackboneError, InputError
from featx.extract import ExtractJob, extract, verify


def _cmd_extract(args) -> int:
    job = ExtractJob(
        image_dir=Path(args.images),
        output_dir=Path(args.out),
        target_size=(args.size, args.size),
        pooled=args.pooled,
        weights=args.weights,
        seed=args.seed,
    )
    written = extract(job)
    if written == 0:
        print("error: no feature files written (all images undecodable)",
              file=sys.stderr)
        return 2
    print(f"wrote {written} feature files to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    report = verify(args.dir)
    for name, reason in report.failures:
        print(f"FAIL {name}: {reason}")
    dims = "x".join(map(str, report.shape)) if report.shape else "?"
    if report.ok:
        print(f"checked {report.total} files (dims {dims}): all pass")
        return 0
    print(f"{len(report.failures)} of {report.total} files failed")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featx",
        description="extract CNN feature grids from images into .capf files")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("extract", help="run images through the backbone")
    sp.add_argument("--images", required=True, help="directory of jpg/png images")
    sp.add_argument("--out", required=True, help="directory for .capf files")
    sp.add_argument("--size", type=int, default=299,
                    help="square resize edge in pixels (default 299)")
    sp.add_argument("--pooled", action="store_true",
                    help="emit a single averaged vector (1 x channels) per image")
    sp.add_argument("--weights", choices=("pretrained", "random"),
                    default="pretrained",
                    help="backbone weights; 'random' needs no download")
    sp.add_argument("--seed", type=int, default=0,
                    help="init seed for --weights random")
    sp.set_defaults(func=_cmd_extract)

    sp = sub.add_parser("verify", help="structurally check a .capf directory")
    sp.add_argument("--dir", required=True, help="directory of .capf files")
    sp.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(message)s", level=logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
