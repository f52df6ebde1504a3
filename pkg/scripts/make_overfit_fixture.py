#!/usr/bin/env python3
"""Materialize the 8-pair synthetic fixture (captions.tsv + features/*.capf).

Useful for poking at the CLI by hand:

    python scripts/make_overfit_fixture.py --out /tmp/fixture
    imgcap build-vocab --captions /tmp/fixture/captions.tsv --out /tmp/fixture/vocab.txt
"""

import argparse

from imgcap.fixtures import OVERFIT_CAPTIONS, write_overfit_fixture


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="directory to write into")
    args = parser.parse_args()
    captions, features = write_overfit_fixture(args.out)
    print(f"captions: {captions} ({len(OVERFIT_CAPTIONS)} images)")
    print(f"features: {features}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
