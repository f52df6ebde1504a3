"""End-to-end gates for the extractor: grid interop with the captioning
trainer, and a full extract -> train -> evaluate smoke run.

Each gate prints one ``ACCEPTANCE [tag] PASS/FAIL`` line.
"""

import csv
import re
from types import SimpleNamespace

import numpy as np
import pytest

from featx import cli as featx_cli
from featx.capf import read_capf

from imgcap import cli as imgcap_cli
from imgcap import datapipe


def _verdict(tag: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE [{tag}] {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"[{tag}] {detail}"


def test_acceptance_grids_interoperate_bit_exactly(corpus, capsys):
    files = sorted(corpus.feature_dir.glob("*.capf"))
    n_images = len(files)
    shapes = {read_capf(p).shape for p in files}

    # the trainer's own reader must see byte-identical payloads
    exact = all(
        datapipe.read_capf(p).tobytes() == read_capf(p).tobytes()
        for p in files)
    loaded = datapipe.load_features(corpus.feature_dir)
    ids_match = sorted(loaded) == sorted(name for name, _, _ in corpus.items)

    verify_code = featx_cli.main(["verify", "--dir", str(corpus.feature_dir)])
    verify_out = capsys.readouterr().out

    ok = (n_images >= 3 and shapes == {(100, 1280)} and exact
          and ids_match and verify_code == 0 and "all pass" in verify_out)
    _verdict("featx-grid", ok,
             f"{n_images} images at 299x299, dims {sorted(shapes)}, "
             f"bit-exact parse {exact}, verify exit {verify_code}")


@pytest.fixture(scope="module")
def smoke_run(corpus, tmp_path_factory):
    """Vocab + 50-epoch training on the extracted corpus features."""
    root = tmp_path_factory.mktemp("smoke")
    vocab = root / "vocab.txt"
    run = root / "run"
    assert imgcap_cli.main(["build-vocab", "--captions",
                            str(corpus.captions_path),
                            "--out", str(vocab)]) == 0
    shape = ["--d-model", "64", "--n-heads", "4",
             "--seq-len", "12", "--ffn-dim", "128"]
    assert imgcap_cli.main(
        ["train", "--captions", str(corpus.captions_path),
         "--features", str(corpus.feature_dir), "--vocab", str(vocab),
         "--out", str(run), "--split", "none", "--seed", "0",
         "--max-epochs", "50", "--patience", "51",
         "--batch-size", "16", "--learning-rate", "0.001", *shape]) == 0
    with open(run / "metrics.csv", newline="") as fh:
        losses = [float(row["train_loss"]) for row in csv.DictReader(fh)]
    return SimpleNamespace(root=root, vocab=vocab, run=run,
                           shape=shape, losses=losses)


def test_acceptance_smoke_training_learns_from_features(
        corpus, smoke_run, capsys):
    capsys.readouterr()  # drop the training log
    code = imgcap_cli.main(
        ["evaluate", "--captions", str(corpus.captions_path),
         "--features", str(corpus.feature_dir),
         "--vocab", str(smoke_run.vocab),
         "--checkpoint", str(smoke_run.run / "best.ckpt"),
         "--report", str(smoke_run.root / "report.csv"), *smoke_run.shape])
    out = capsys.readouterr().out
    assert code == 0
    bleu1 = float(re.search(r"BLEU-1 ([0-9.]+)", out).group(1))

    monotone = all(b < a for a, b in zip(smoke_run.losses[:10],
                                         smoke_run.losses[1:10]))
    ok = (len(smoke_run.losses) == 50 and monotone and bleu1 > 0.5)
    _verdict("featx-smoke", ok,
             f"30 images x 5 captions, 50 epochs: loss "
             f"{smoke_run.losses[0]:.3f}->{smoke_run.losses[9]:.3f} over "
             f"first 10 (strictly decreasing {monotone}), "
             f"train-set BLEU-1 {bleu1:.4f} > 0.5")


def test_smoke_model_names_colors_and_shapes(corpus, smoke_run):
    """The captions it emits actually describe the right image: every decoded
    caption for the training images contains that image's color and shape
    words — evidence the features carry image identity, not just a prior."""
    report = smoke_run.root / "report_naming.csv"
    assert imgcap_cli.main(
        ["evaluate", "--captions", str(corpus.captions_path),
         "--features", str(corpus.feature_dir),
         "--vocab", str(smoke_run.vocab),
         "--checkpoint", str(smoke_run.run / "best.ckpt"),
         "--report", str(report), *smoke_run.shape]) == 0
    with open(report, newline="") as fh:
        rows = {row["image_id"]: row["hypothesis"]
                for row in csv.DictReader(fh)}
    hits = sum(
        1 for name, color, shape in corpus.items
        if color in rows[name].split() and shape in rows[name].split())
    assert hits >= 25, f"only {hits}/30 captions name their color and shape"


def test_pooled_features_also_train(corpus):
    """(1, 1280) pooled vectors are a valid, loadable feature layout."""
    pooled_dir = corpus.root / "features_pooled"
    code = featx_cli.main(["extract", "--images", str(corpus.image_dir),
                           "--out", str(pooled_dir), "--pooled",
                           "--weights", "random", "--seed", "0"])
    assert code == 0
    loaded = datapipe.load_features(pooled_dir)
    assert len(loaded) == 30
    assert all(rec.grid.shape == (1, 1280) for rec in loaded.values())
