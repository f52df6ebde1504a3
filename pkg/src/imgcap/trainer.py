"""Adam training loop with BLEU-4 early stopping and binary checkpoints."""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import captioner, datapipe
from .errors import CheckpointError, ContractError, NumericError
from .ndcore import Graph, Tensor, zero_grads
from .textpipe import END_ID
from .transformer import Model, ModelConfig, ModelParams, config_key, _param_specs


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    checkpoint_dir: str | None = None
    metrics_path: str | None = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def create(cls, params: ModelParams) -> "AdamState":
        return cls(m={n: np.zeros_like(p.data) for n, p in params.items()},
                   v={n: np.zeros_like(p.data) for n, p in params.items()})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on the parameter buffers.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"missing gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


class Adam:
    """Thin stateful wrapper so the loop reads `optimizer.step(params)`."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.config = config
        self.state = AdamState.create(params)

    def step(self, params: ModelParams) -> None:
        adam_step(params, {n: p.grad for n, p in params.items()}, self.state, self.config)


# ---------------------------------------------------------------------------
# epoch loops


def _batch_loss(model: Model, batch: datapipe.Batch, record: bool):
    g = Graph(record=record)
    logits = model.decode(g, batch.input_ids, model.encode(g, batch.features))
    loss = g.cross_entropy(logits, batch.target_ids, batch.pad_mask)
    return g, loss


def run_epoch(model: Model, batch_stream, optimizer: Adam) -> float:
    """Forward/backward/update over one epoch; token-weighted mean loss."""
    total = 0.0
    tokens = 0
    for index, batch in enumerate(batch_stream):
        g, loss = _batch_loss(model, batch, record=True)
        value = loss.data.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite train loss {value} at batch {index}")
        g.backward(loss)
        optimizer.step(model.params)
        zero_grads(model.params.tensors())
        n = int(batch.pad_mask.sum())
        total += value * n
        tokens += n
    return total / max(tokens, 1)


def validate(model: Model, dataset: datapipe.Dataset,
             batch_size: int = 128) -> tuple[float, float]:
    """(teacher-forced val loss, greedy corpus BLEU-4); no gradient recording."""
    total = 0.0
    tokens = 0
    for batch in datapipe.batches(dataset, batch_size, shuffle_seed=0,
                                  shuffle=False, prefetch=0):
        _, loss = _batch_loss(model, batch, record=False)
        n = int(batch.pad_mask.sum())
        total += loss.data.item() * n
        tokens += n
    val_loss = total / max(tokens, 1)

    refs = {image_id: [_content(ids) for ids in ref_ids]
            for image_id, ref_ids in dataset.references().items()}
    hyps = captioner.decode_dataset(model, dataset)
    segments = [(hyps[i], refs[i]) for i in sorted(hyps)]
    return val_loss, captioner.corpus_bleu(segments, n=4)


def _content(ids: np.ndarray) -> list[int]:
    out = []
    for i in ids[1:]:
        if i == END_ID:
            break
        out.append(int(i))
    return out


def early_stop_check(bleu_history: list[float], patience: int) -> bool:
    """True when the best value (earliest on ties) is >= patience epochs old.

    Never fires while the metric is still strictly improving.
    """
    if patience < 1:
        raise ContractError(f"patience must be >= 1, got {patience}")
    if not bleu_history:
        return False
    best = max(bleu_history)
    best_idx = bleu_history.index(best)
    return (len(bleu_history) - 1) - best_idx >= patience


# ---------------------------------------------------------------------------
# checkpoints (CKPT1)


CKPT_MAGIC = b"CKPT1\x00"
CKPT_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def config_hash(config: ModelConfig) -> int:
    """FNV-1a 64 over the canonical architecture string."""
    h = _FNV_OFFSET
    for byte in config_key(config).encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def save_checkpoint(params: ModelParams, adam_state: AdamState | None,
                    config: ModelConfig, path) -> None:
    """Serialize parameters (+ Adam slots as .m/.v, step as adam.t).

    Tensors are written sorted by name so save -> load -> save round-trips
    byte-identically.
    """
    entries: dict[str, np.ndarray] = {n: p.data for n, p in params.items()}
    if adam_state is not None:
        for n in params.names():
            entries[n + ".m"] = adam_state.m[n]
            entries[n + ".v"] = adam_state.v[n]
        entries["adam.t"] = np.asarray(float(adam_state.t), dtype=np.float32)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", config_hash(config)))
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    tmp.replace(path)


@dataclass
class Checkpoint:
    config_hash: int
    tensors: dict[str, np.ndarray]


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:6] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:6]!r}")
    try:
        (version,) = struct.unpack_from("<I", blob, 6)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (chash,) = struct.unpack_from("<Q", blob, 10)
        (count,) = struct.unpack_from("<I", blob, 18)
        off = 22
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
            off += 4 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            if off + 4 * n > len(blob):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            data = np.frombuffer(blob, dtype="<f4", offset=off, count=n)
            off += 4 * n
            tensors[name] = data.reshape(shape).astype(np.float32)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return Checkpoint(config_hash=chash, tensors=tensors)


def restore(checkpoint: Checkpoint, config: ModelConfig,
            ) -> tuple[ModelParams, AdamState | None]:
    """Rebuild params (and Adam state when present) for a matching config."""
    if checkpoint.config_hash != config_hash(config):
        raise CheckpointError(
            f"checkpoint architecture hash {checkpoint.config_hash:#018x} does not "
            f"match config hash {config_hash(config):#018x}")
    tensors = {}
    for name, shape, _ in _param_specs(config):
        if name not in checkpoint.tensors:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = checkpoint.tensors[name]
        if arr.shape != shape:
            raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, "
                                  f"expected {shape}")
        tensors[name] = Tensor(arr.copy(), requires_grad=True)
    params = ModelParams(tensors)
    state = None
    if "adam.t" in checkpoint.tensors:
        m = {}
        v = {}
        for name in params.names():
            if name + ".m" not in checkpoint.tensors or name + ".v" not in checkpoint.tensors:
                raise CheckpointError(f"checkpoint is missing Adam slots for {name!r}")
            m[name] = checkpoint.tensors[name + ".m"].copy()
            v[name] = checkpoint.tensors[name + ".v"].copy()
        state = AdamState(m=m, v=v, t=int(checkpoint.tensors["adam.t"].item()))
    return params, state


# ---------------------------------------------------------------------------
# the fit loop


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_bleu4: float
    wall_seconds: float


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    stop_reason: str = "max_epochs"  # or "early_stop"
    best_epoch: int = 0


METRICS_HEADER = "epoch,train_loss,val_loss,val_bleu4,wall_seconds"


def _metrics_line(row: EpochRow) -> str:
    return (f"{row.epoch},{row.train_loss:.8f},{row.val_loss:.8f},"
            f"{row.val_bleu4:.8f},{row.wall_seconds:.3f}")


def fit(model: Model, train_ds: datapipe.Dataset, val_ds: datapipe.Dataset,
        config: TrainConfig, start_epoch: int = 0,
        optimizer: Adam | None = None, clock=time.perf_counter,
        log=None) -> TrainReport:
    """Train with per-epoch validation, checkpointing, and early stopping.

    Epoch numbering is 1-based. start_epoch > 0 resumes after that epoch
    (batch order is a pure function of (seed, epoch), so a resumed run
    replays the uninterrupted schedule). clock is injectable so tests can
    pin wall_seconds; everything else is already seed-deterministic.
    """
    optimizer = optimizer or Adam(model.params, config)
    report = TrainReport()
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_fh = None
    if config.metrics_path is not None:
        fresh = start_epoch == 0
        metrics_fh = open(config.metrics_path, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            metrics_fh.write(METRICS_HEADER + "\n")
            metrics_fh.flush()

    bleu_history: list[float] = []
    best_bleu = -1.0
    try:
        for epoch in range(start_epoch + 1, config.max_epochs + 1):
            t0 = clock()
            stream = datapipe.batches(train_ds, config.batch_size,
                                      shuffle_seed=config.seed, epoch=epoch)
            train_loss = run_epoch(model, stream, optimizer)
            val_loss, val_bleu4 = validate(model, val_ds, config.batch_size)
            row = EpochRow(epoch, train_loss, val_loss, val_bleu4, clock() - t0)
            report.rows.append(row)
            bleu_history.append(val_bleu4)
            if metrics_fh is not None:
                metrics_fh.write(_metrics_line(row) + "\n")
                metrics_fh.flush()
            if log is not None:
                log(f"epoch {epoch:3d}  train_loss {train_loss:.4f}  "
                    f"val_loss {val_loss:.4f}  val_bleu4 {val_bleu4:.4f}  "
                    f"({row.wall_seconds:.1f}s)")
            if ckpt_dir is not None:
                save_checkpoint(model.params, optimizer.state, model.config,
                                ckpt_dir / "last.ckpt")
            if val_bleu4 > best_bleu:
                best_bleu = val_bleu4
                report.best_epoch = epoch
                if ckpt_dir is not None:
                    save_checkpoint(model.params, optimizer.state, model.config,
                                    ckpt_dir / "best.ckpt")
            if early_stop_check(bleu_history, config.patience):
                report.stop_reason = "early_stop"
                break
        else:
            report.stop_reason = "max_epochs"
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return report
