"""Tiny synthetic datasets for tests, the selftest command, and demo scripts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datapipe import Dataset, FeatureRecord, encode_records, write_capf
from .textpipe import CaptionRecord, Vocab, build_vocab, normalize_caption
from .transformer import ModelConfig
from .trainer import TrainConfig

# Eight image/caption pairs with distinct content words. Small enough to
# memorize quickly, varied enough that decoding must actually use the
# features to tell images apart.
OVERFIT_CAPTIONS: dict[str, str] = {
    "img0.jpg": "a red bird sits on a branch",
    "img1.jpg": "two dogs run across the green field",
    "img2.jpg": "a man rides a brown horse",
    "img3.jpg": "the small cat sleeps on a chair",
    "img4.jpg": "a yellow bus stops near the school",
    "img5.jpg": "children play with a blue ball",
    "img6.jpg": "an old boat floats on the lake",
    "img7.jpg": "a woman reads a book in the park",
}

FEAT_LEN = 4
FEAT_DIM = 8
SEQ_LEN = 12

# Fixture training setup: contract defaults except the learning rate, which
# is raised so 8 full-batch pairs overfit inside a few hundred epochs.
OVERFIT_LR = 2e-3


def overfit_records() -> list[CaptionRecord]:
    return [CaptionRecord(image_id, cap, normalize_caption(cap))
            for image_id, cap in OVERFIT_CAPTIONS.items()]


def overfit_features(seed: int = 7) -> dict[str, FeatureRecord]:
    rng = np.random.default_rng(seed)
    return {image_id: FeatureRecord(image_id,
                                    rng.normal(size=(FEAT_LEN, FEAT_DIM)).astype(np.float32))
            for image_id in OVERFIT_CAPTIONS}


def overfit_vocab() -> Vocab:
    return build_vocab([r.normalized for r in overfit_records()], max_size=64)


def overfit_dataset(seed: int = 7) -> tuple[Dataset, Vocab]:
    """All eight pairs in one Dataset (train = val = test territory)."""
    vocab = overfit_vocab()
    records = encode_records(overfit_records(), vocab, SEQ_LEN)
    pairs = [(r.image_id, r.token_ids) for r in records]
    return Dataset("overfit", pairs, overfit_features(seed)), vocab


def overfit_model_config(vocab: Vocab) -> ModelConfig:
    return ModelConfig(vocab_size=vocab.size, feat_len=FEAT_LEN, feat_dim=FEAT_DIM,
                       d_model=64, n_heads=4, seq_len=SEQ_LEN, ffn_dim=128)


def overfit_train_config(out_dir=None, **overrides) -> TrainConfig:
    kwargs = dict(learning_rate=OVERFIT_LR, batch_size=8, max_epochs=500,
                  patience=501, seed=0)
    if out_dir is not None:
        kwargs["checkpoint_dir"] = str(out_dir)
        kwargs["metrics_path"] = str(Path(out_dir) / "metrics.csv")
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def write_overfit_fixture(dir_path) -> tuple[Path, Path]:
    """Materialize the fixture on disk: captions.tsv plus features/*.capf."""
    root = Path(dir_path)
    feat_dir = root / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    captions_path = root / "captions.tsv"
    lines = [f"{image_id}\t{cap}" for image_id, cap in OVERFIT_CAPTIONS.items()]
    captions_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for image_id, rec in overfit_features().items():
        write_capf(feat_dir / f"{image_id}.capf", rec.grid)
    return captions_path, feat_dir
