"""Caption files, image splits, CAPF1 feature files, and batch assembly."""

from __future__ import annotations

import logging
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ContractError, DatasetError, EmptyCaptionError,
                     FormatError, ParseError)
from .ndcore import Tensor
from .textpipe import PAD_ID, CaptionRecord, Vocab, encode, normalize_caption

log = logging.getLogger(__name__)

# Image counts (train, val, test) used when the pool is large enough.
PAPER_SPLIT = (20915, 5124, 105)
PROPORTIONS = (0.8, 0.196, 0.004)

CAPF_MAGIC = b"CAPF1\x00"


# ---------------------------------------------------------------------------
# caption files


def load_captions(path, fmt: str = "flickr30k-pipe") -> list[CaptionRecord]:
    """Parse and normalize a caption file; token_ids stay unencoded (None).

    flickr30k-pipe rows look like `image_name|comment_number|comment`; tsv
    rows are `image_name<TAB>caption`. Captions that normalize to nothing are
    rejected with a warning; an image whose every caption was rejected is
    reported too. A structurally malformed row is a hard ParseError naming
    its line number.
    """
    if fmt in ("flickr30k-pipe", "pipe"):
        pipe = True
    elif fmt == "tsv":
        pipe = False
    else:
        raise ConfigError(f"unknown caption format {fmt!r}")

    records: list[CaptionRecord] = []
    kept_per_image: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if pipe:
                parts = line.split("|", 2)
                if len(parts) != 3:
                    raise ParseError(f"{path}: line {lineno}: expected "
                                     f"image|comment_number|comment, got {line!r}")
                image_id, number, raw = (p.strip() for p in parts)
                if lineno == 1 and image_id == "image_name":
                    continue  # header row
                try:
                    int(number)
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: comment_number "
                                     f"{number!r} is not an integer") from None
            else:
                parts = line.split("\t", 1)
                if len(parts) != 2:
                    raise ParseError(f"{path}: line {lineno}: expected "
                                     f"image<TAB>caption, got {line!r}")
                image_id, raw = parts[0].strip(), parts[1].strip()
            if not image_id:
                raise ParseError(f"{path}: line {lineno}: empty image id")
            kept_per_image.setdefault(image_id, 0)
            try:
                normalized = normalize_caption(raw)
            except EmptyCaptionError:
                log.warning("%s: line %d: caption for %s empty after cleaning, dropped",
                            path, lineno, image_id)
                continue
            kept_per_image[image_id] += 1
            records.append(CaptionRecord(image_id, raw, normalized))

    for image_id, kept in kept_per_image.items():
        if kept == 0:
            log.warning("%s: image %s lost all captions to cleaning, dropped", path, image_id)
    return records


def encode_records(records: list[CaptionRecord], vocab: Vocab,
                   seq_len: int) -> list[CaptionRecord]:
    """Fill token_ids on every record (new list, same order)."""
    return [CaptionRecord(r.image_id, r.raw, r.normalized,
                          encode(r.normalized, vocab, seq_len))
            for r in records]


# ---------------------------------------------------------------------------
# feature files (CAPF1)


def write_capf(path, array: np.ndarray) -> None:
    """magic, u32 rank, u32 extents, then row-major little-endian float32."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CAPF_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_capf(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:6] != CAPF_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:6]!r}, expected {CAPF_MAGIC!r}")
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, 6)
    head_end = 10 + 4 * rank
    if len(blob) < head_end:
        raise FormatError(f"{path}: truncated extents (rank {rank})")
    extents = struct.unpack_from(f"<{rank}I", blob, 10) if rank else ()
    count = int(np.prod(extents, dtype=np.int64)) if rank else 1
    expected = head_end + 4 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size mismatch, expected {expected} "
                          f"bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=head_end, count=count)
    return data.reshape(extents).astype(np.float32)


@dataclass(frozen=True)
class FeatureRecord:
    """One image's precomputed feature grid [feat_len, feat_dim], finite."""
    image_id: str
    grid: np.ndarray


def load_features(dir_path) -> dict[str, FeatureRecord]:
    """Read every *.capf in a directory; image_id is the file stem.

    All grids must be rank 2 with identical dims and finite values.
    """
    root = Path(dir_path)
    files = sorted(root.glob("*.capf"))
    if not files:
        raise DatasetError(f"no .capf files in {root}")
    out: dict[str, FeatureRecord] = {}
    dims = None
    for f in files:
        grid = read_capf(f)
        if grid.ndim != 2:
            raise FormatError(f"{f}: feature grid must be rank 2, got rank {grid.ndim}")
        if dims is None:
            dims = grid.shape
        elif grid.shape != dims:
            raise DatasetError(f"{f}: grid {grid.shape} inconsistent with {dims}")
        if not np.isfinite(grid).all():
            raise DatasetError(f"{f}: non-finite feature values")
        out[f.stem] = FeatureRecord(f.stem, grid)
    return out


# ---------------------------------------------------------------------------
# datasets and splits


@dataclass
class Dataset:
    """Encoded records plus the feature map that covers them."""
    split_tag: str
    records: list[tuple[str, np.ndarray]]
    features: dict[str, FeatureRecord] = field(default_factory=dict)

    def __post_init__(self):
        if self.features:
            for image_id, _ in self.records:
                if image_id not in self.features:
                    raise DatasetError(f"{self.split_tag}: no feature grid for "
                                       f"image {image_id}")

    def image_ids(self) -> list[str]:
        seen = dict.fromkeys(image_id for image_id, _ in self.records)
        return list(seen)

    def references(self) -> dict[str, list[np.ndarray]]:
        refs: dict[str, list[np.ndarray]] = {}
        for image_id, ids in self.records:
            refs.setdefault(image_id, []).append(ids)
        return refs

    def __len__(self) -> int:
        return len(self.records)


def _as_pairs(records) -> list[tuple[str, np.ndarray]]:
    pairs = []
    for r in records:
        if r.token_ids is None:
            raise ContractError(f"record for {r.image_id} is not encoded yet")
        pairs.append((r.image_id, r.token_ids))
    return pairs


def default_counts(n_images: int) -> tuple[int, int, int]:
    """Fixed counts when the pool is big enough, else proportional floors."""
    if n_images >= sum(PAPER_SPLIT):
        return PAPER_SPLIT
    return tuple(int(n_images * p) for p in PROPORTIONS)


def split_dataset(records: list[CaptionRecord], seed: int,
                  counts: tuple[int, int, int] | None = None,
                  features: dict[str, FeatureRecord] | None = None,
                  ) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle distinct image ids with a seeded RNG and cut train/val/test.

    Split is by image: all captions of an image land in the same side.
    Images beyond sum(counts) are left unused.
    """
    images = sorted({r.image_id for r in records})
    if counts is None:
        counts = default_counts(len(images))
    a, b, c = (int(x) for x in counts)
    if min(a, b, c) < 0:
        raise ConfigError(f"negative split counts {counts}")
    if a + b + c > len(images):
        raise ConfigError(f"split counts {counts} exceed {len(images)} distinct images")
    rng = np.random.default_rng(seed)
    order = [images[i] for i in rng.permutation(len(images))]
    sides = {"train": set(order[:a]),
             "val": set(order[a:a + b]),
             "test": set(order[a + b:a + b + c])}
    out = []
    for tag in ("train", "val", "test"):
        members = sides[tag]
        recs = [r for r in records if r.image_id in members]
        feats = {}
        if features is not None:
            missing = sorted(members - features.keys())
            if missing:
                raise DatasetError(f"{tag}: no feature grid for image {missing[0]} "
                                   f"({len(missing)} missing in total)")
            feats = {i: features[i] for i in members}
        out.append(Dataset(tag, _as_pairs(recs), feats))
    return tuple(out)


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Teacher-forcing view of a record chunk.

    input_ids = caption[0..T-1], target_ids = caption[1..T]; pad_mask is
    False exactly where the target is <pad>.
    """
    features: Tensor
    input_ids: np.ndarray
    target_ids: np.ndarray
    pad_mask: np.ndarray


def _assemble(dataset: Dataset, order: list[int], batch_size: int):
    for lo in range(0, len(order), batch_size):
        chunk = [dataset.records[i] for i in order[lo:lo + batch_size]]
        grids = np.stack([dataset.features[image_id].grid for image_id, _ in chunk])
        ids = np.stack([token_ids for _, token_ids in chunk])
        inputs = ids[:, :-1]
        targets = ids[:, 1:]
        yield Batch(Tensor(grids), inputs, targets, targets != PAD_ID)


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int = 0,
            shuffle: bool = True, prefetch: int = 2):
    """One epoch of batches; the short final batch is kept.

    Order is a pure function of (shuffle_seed, epoch). prefetch > 0 assembles
    batches on a helper thread into a bounded buffer; the stream is
    element-wise identical to the synchronous prefetch=0 path.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not dataset.records:
        return
    if not dataset.features:
        raise DatasetError(f"{dataset.split_tag}: dataset has no feature grids attached")
    if shuffle:
        rng = np.random.default_rng((shuffle_seed, epoch))
        order = list(rng.permutation(len(dataset.records)))
    else:
        order = list(range(len(dataset.records)))

    if prefetch <= 0:
        yield from _assemble(dataset, order, batch_size)
        return

    buf: queue.Queue = queue.Queue(maxsize=prefetch)
    stop = threading.Event()
    done = object()

    def produce():
        try:
            for item in _assemble(dataset, order, batch_size):
                while not stop.is_set():
                    try:
                        buf.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            buf.put(done)
        except BaseException as exc:  # surface assembly errors in the consumer
            buf.put(exc)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    try:
        while True:
            item = buf.get()
            if item is done:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
