#!/usr/bin/env python3
"""End-to-end demo on the synthetic fixture: build a vocab, train until the
model memorizes all eight captions, evaluate, and caption one image.

Runs the same command-line entry points a user would:

    python scripts/overfit_demo.py --out /tmp/demo [--epochs 120]
"""

import argparse
from pathlib import Path

from imgcap import cli
from imgcap.fixtures import write_overfit_fixture


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="working directory")
    parser.add_argument("--epochs", type=int, default=120)
    args = parser.parse_args()

    root = Path(args.out)
    captions, features = write_overfit_fixture(root)
    vocab = root / "vocab.txt"
    run = root / "run"

    steps = [
        ["build-vocab", "--captions", str(captions), "--out", str(vocab)],
        ["train", "--captions", str(captions), "--features", str(features),
         "--vocab", str(vocab), "--out", str(run), "--split", "none",
         "--max-epochs", str(args.epochs), "--patience", str(args.epochs + 1),
         "--learning-rate", "0.002", "--batch-size", "8",
         "--d-model", "64", "--n-heads", "4", "--seq-len", "12",
         "--ffn-dim", "128"],
        ["evaluate", "--captions", str(captions), "--features", str(features),
         "--vocab", str(vocab), "--checkpoint", str(run / "best.ckpt"),
         "--report", str(run / "report.csv"), "--d-model", "64",
         "--n-heads", "4", "--seq-len", "12", "--ffn-dim", "128"],
        ["caption", "--checkpoint", str(run / "best.ckpt"),
         "--features", str(features / "img2.jpg.capf"), "--vocab", str(vocab),
         "--d-model", "64", "--n-heads", "4", "--seq-len", "12",
         "--ffn-dim", "128"],
    ]
    for argv in steps:
        print(f"\n$ imgcap {' '.join(argv)}")
        code = cli.main(argv)
        if code != 0:
            return code
    print(f"\nartifacts in {run}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
