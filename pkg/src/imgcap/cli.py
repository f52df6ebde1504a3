"""Command-line pipeline: build-vocab, train, evaluate, caption, selftest.

Exit codes: 0 success, 1 selftest failure, 2 input/config error, 3 numeric
abort during training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import datapipe, selftest, textpipe, trainer
from .captioner import evaluate_test_set, greedy_decode
from .errors import ConfigError, EngineError, NumericError
from .ndcore import Tensor
from .textpipe import Vocab, build_vocab, decode
from .transformer import Model, ModelConfig

MODEL_KEYS = ("d_model", "n_heads", "seq_len", "ffn_dim")
TRAIN_KEYS = ("learning_rate", "beta1", "beta2", "eps", "batch_size",
              "max_epochs", "patience", "seed")


def read_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{path}: line {lineno}: expected key = value, got {line!r}")
        out[key] = value
    return out


def _sniff_format(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            if "\t" in line:
                return "tsv"
            if "|" in line:
                return "flickr30k-pipe"
            break
    raise ConfigError(f"{path}: cannot sniff caption format (no tab or pipe in first row)")


def _load_captions(path, fmt: str):
    if fmt == "auto":
        fmt = _sniff_format(path)
    return datapipe.load_captions(path, fmt)


class _Settings:
    """Layered config: CLI flag beats config file beats default."""

    def __init__(self, args, file_cfg: dict[str, str]):
        self.args = args
        self.file_cfg = file_cfg

    def get(self, key: str, default, cast):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.file_cfg:
            try:
                return cast(self.file_cfg[key])
            except ValueError:
                raise ConfigError(f"config key {key}: cannot parse "
                                  f"{self.file_cfg[key]!r}") from None
        return default


def _model_config(settings: _Settings, vocab: Vocab, feat_len: int,
                  feat_dim: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab.size,
        feat_len=feat_len,
        feat_dim=feat_dim,
        d_model=settings.get("d_model", 512, int),
        n_heads=settings.get("n_heads", 8, int),
        seq_len=settings.get("seq_len", 24, int),
        ffn_dim=settings.get("ffn_dim", 2048, int),
    )


def _feature_dims(features: dict) -> tuple[int, int]:
    grid = next(iter(features.values())).grid
    return grid.shape[0], grid.shape[1]


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(args) -> int:
    records = _load_captions(args.captions, args.format)
    if not records:
        raise ConfigError(f"{args.captions}: no usable captions")
    captions = [r.normalized for r in records]
    vocab = build_vocab(captions, args.max_size)
    vocab.save(args.out)
    total = 0
    known = 0
    for cap in captions:
        for tok in cap.split():
            total += 1
            known += tok in vocab
    print(f"tokens: {vocab.size}")
    print(f"coverage: {100.0 * known / max(total, 1):.2f}% of corpus tokens in-vocab")
    return 0


def _split(settings: _Settings, records, features, seed: int):
    mode = settings.get("split", "auto", str)
    counts = None
    explicit = [settings.file_cfg.get(k) for k in ("train_count", "val_count", "test_count")]
    if any(x is not None for x in explicit):
        if not all(x is not None for x in explicit):
            raise ConfigError("train_count, val_count, test_count must be set together")
        counts = tuple(int(x) for x in explicit)
    if mode == "none":
        pairs = datapipe._as_pairs(records)
        images = {r.image_id for r in records}
        missing = sorted(images - features.keys())
        if missing:
            raise datapipe.DatasetError(f"no feature grid for image {missing[0]} "
                                        f"({len(missing)} missing in total)")
        feats = {i: features[i] for i in images}
        ds = datapipe.Dataset("all", pairs, feats)
        return ds, ds, ds
    if mode != "auto":
        raise ConfigError(f"unknown split mode {mode!r} (use auto or none)")
    return datapipe.split_dataset(records, seed, counts, features)


def cmd_train(args) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    settings = _Settings(args, file_cfg)
    seed = settings.get("seed", 0, int)

    vocab = Vocab.load(args.vocab)
    features = datapipe.load_features(args.features)
    feat_len, feat_dim = _feature_dims(features)
    mcfg = _model_config(settings, vocab, feat_len, feat_dim)

    records = _load_captions(args.captions, args.format)
    records = datapipe.encode_records(records, vocab, mcfg.seq_len)
    train_ds, val_ds, _ = _split(settings, records, features, seed)
    if not train_ds.records or not val_ds.records:
        raise ConfigError(f"empty split: train={len(train_ds)} records, "
                          f"val={len(val_ds)} records")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = trainer.TrainConfig(
        learning_rate=settings.get("learning_rate", 1e-4, float),
        beta1=settings.get("beta1", 0.9, float),
        beta2=settings.get("beta2", 0.999, float),
        eps=settings.get("eps", 1e-8, float),
        batch_size=settings.get("batch_size", 128, int),
        max_epochs=settings.get("max_epochs", 50, int),
        patience=settings.get("patience", 10, int),
        seed=seed,
        checkpoint_dir=str(out_dir),
        metrics_path=str(out_dir / "metrics.csv"),
    )

    resolved = {
        "d_model": mcfg.d_model, "n_heads": mcfg.n_heads, "seq_len": mcfg.seq_len,
        "ffn_dim": mcfg.ffn_dim, "learning_rate": tcfg.learning_rate,
        "beta1": tcfg.beta1, "beta2": tcfg.beta2, "eps": tcfg.eps,
        "batch_size": tcfg.batch_size, "max_epochs": tcfg.max_epochs,
        "patience": tcfg.patience, "seed": tcfg.seed,
    }
    (out_dir / "train.cfg").write_text(
        "".join(f"{k} = {v}\n" for k, v in resolved.items()), encoding="utf-8")

    model = Model(mcfg, seed=seed)
    print(f"training: {len(train_ds)} train records over {len(train_ds.image_ids())} "
          f"images, {len(val_ds)} val records, {model.params.size()} parameters")
    report = trainer.fit(model, train_ds, val_ds, tcfg, log=print)
    print(f"stopped: {report.stop_reason} after {len(report.rows)} epochs "
          f"(best epoch {report.best_epoch})")
    return 0


def _restore_model(settings: _Settings, vocab: Vocab, feat_len: int, feat_dim: int,
                   checkpoint_path) -> Model:
    mcfg = _model_config(settings, vocab, feat_len, feat_dim)
    ckpt = trainer.load_checkpoint(checkpoint_path)
    params, _ = trainer.restore(ckpt, mcfg)
    return Model(mcfg, params=params)


def cmd_evaluate(args) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    settings = _Settings(args, file_cfg)
    vocab = Vocab.load(args.vocab)
    features = datapipe.load_features(args.features)
    feat_len, feat_dim = _feature_dims(features)
    model = _restore_model(settings, vocab, feat_len, feat_dim, args.checkpoint)

    records = _load_captions(args.captions, args.format)
    records = datapipe.encode_records(records, vocab, model.config.seq_len)
    pairs = [(r.image_id, r.token_ids) for r in records]
    images = {r.image_id for r in records}
    missing = sorted(images - features.keys())
    if missing:
        raise datapipe.DatasetError(f"no feature grid for image {missing[0]} "
                                    f"({len(missing)} missing in total)")
    ds = datapipe.Dataset("test", pairs, {i: features[i] for i in images})

    corpus, results = evaluate_test_set(model, ds, vocab, args.report)
    for n, score in enumerate(corpus, start=1):
        print(f"BLEU-{n} {score:.4f}")
    print(f"report: {args.report} ({len(results)} images)")
    return 0


def cmd_caption(args) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    settings = _Settings(args, file_cfg)
    vocab = Vocab.load(args.vocab)
    grid = datapipe.read_capf(args.features)
    if grid.ndim != 2:
        raise ConfigError(f"{args.features}: expected a rank-2 feature grid, "
                          f"got rank {grid.ndim}")
    model = _restore_model(settings, vocab, grid.shape[0], grid.shape[1],
                           args.checkpoint)
    max_len = args.max_len or model.config.seq_len
    ids = greedy_decode(model, Tensor(grid), max_len)
    print(decode(ids, vocab))
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest.run_all(print) else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imgcap",
                                description="caption images from precomputed feature grids")
    sub = p.add_subparsers(dest="command", required=True)

    def add_captions(sp):
        sp.add_argument("--captions", required=True, help="caption file")
        sp.add_argument("--format", default="auto",
                        choices=("auto", "flickr30k-pipe", "pipe", "tsv"),
                        help="caption file layout (default: sniff)")

    sp = sub.add_parser("build-vocab", help="build a vocab file from captions")
    add_captions(sp)
    sp.add_argument("--out", required=True, help="vocab file to write")
    sp.add_argument("--max-size", type=int, default=textpipe.MAX_VOCAB,
                    help="vocab cap including specials")
    sp.set_defaults(func=cmd_build_vocab)

    sp = sub.add_parser("train", help="train a captioning model")
    add_captions(sp)
    sp.add_argument("--features", required=True, help="directory of .capf grids")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--config", help="flat key = value config file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-epochs", dest="max_epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float)
    sp.add_argument("--split", choices=("auto", "none"))
    sp.add_argument("--d-model", dest="d_model", type=int)
    sp.add_argument("--n-heads", dest="n_heads", type=int)
    sp.add_argument("--seq-len", dest="seq_len", type=int)
    sp.add_argument("--ffn-dim", dest="ffn_dim", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a caption set")
    add_captions(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True, help="directory of .capf grids")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--report", required=True, help="per-image CSV to write")
    sp.add_argument("--config", help="flat key = value config file")
    sp.add_argument("--d-model", dest="d_model", type=int)
    sp.add_argument("--n-heads", dest="n_heads", type=int)
    sp.add_argument("--seq-len", dest="seq_len", type=int)
    sp.add_argument("--ffn-dim", dest="ffn_dim", type=int)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("caption", help="caption one feature grid")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True, help="single .capf file")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--config", help="flat key = value config file")
    sp.add_argument("--max-len", dest="max_len", type=int)
    sp.add_argument("--d-model", dest="d_model", type=int)
    sp.add_argument("--n-heads", dest="n_heads", type=int)
    sp.add_argument("--seq-len", dest="seq_len", type=int)
    sp.add_argument("--ffn-dim", dest="ffn_dim", type=int)
    sp.set_defaults(func=cmd_caption)

    sp = sub.add_parser("selftest", help="run built-in health checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (EngineError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
