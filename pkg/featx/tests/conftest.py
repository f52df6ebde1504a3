"""Shared fixtures: synthetic photo corpus + one extraction run per session."""

import sys
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from fxhelpers import COLORS, SHAPES, TEMPLATES, draw_shape  # noqa: E402

from featx import cli  # noqa: E402


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """30 images (6 colors x 5 shapes), 5 captions each, extracted features."""
    root = tmp_path_factory.mktemp("corpus")
    image_dir = root / "images"
    image_dir.mkdir()
    items = []
    for i, (color, shape) in enumerate(
            (c, s) for c in COLORS for s in SHAPES):
        name = f"img_{i:02d}.png"
        draw_shape(color, shape).save(image_dir / name)
        items.append((name, color, shape))

    captions_path = root / "captions.tsv"
    lines = [f"{name}\t{tpl.format(c=color, s=shape)}"
             for name, color, shape in items for tpl in TEMPLATES]
    captions_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    feature_dir = root / "features"
    code = cli.main(["extract", "--images", str(image_dir),
                     "--out", str(feature_dir),
                     "--weights", "random", "--seed", "0"])
    assert code == 0
    return SimpleNamespace(root=root, image_dir=image_dir,
                           feature_dir=feature_dir,
                           captions_path=captions_path, items=items)
