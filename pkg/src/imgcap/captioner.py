"""Greedy caption decoding and BLEU scoring.

BLEU follows the classic corpus recipe: modified n-gram precision with
per-reference clipping, counts pooled over all segments, uniform-weight
geometric mean, and a brevity penalty against the closest reference length
(ties broken toward the shorter reference). Corpus scores use no smoothing;
sentence scores may substitute a tiny epsilon for zero precisions.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DatasetError
from .ndcore import Graph, Tensor
from .textpipe import END_ID, PAD_ID, START_ID, Vocab
from .transformer import Model

# tokens are anything hashable; id sequences and word strings both work


@dataclass(frozen=True)
class BleuConfig:
    max_order: int = 4
    smoothing: str = "epsilon"  # sentence-level only: "epsilon" or "none"
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.max_order < 1:
            raise ContractError(f"max_order must be >= 1, got {self.max_order}")
        if self.smoothing not in ("epsilon", "none"):
            raise ContractError(f"unknown smoothing {self.smoothing!r}")


@dataclass
class CaptionResult:
    image_id: str
    hypothesis: list[str]
    references: list[list[str]]
    bleu: tuple[float, float, float, float]


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_ngram_precision(hypothesis, references, n: int) -> tuple[int, int]:
    """(clipped matches, total hypothesis n-grams).

    Each hypothesis n-gram counts at most as often as its maximum count in
    any single reference. A hypothesis shorter than n yields (0, 0).
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    hyp = ngram_counts(hypothesis, n)
    total = sum(hyp.values())
    if total == 0:
        return 0, 0
    best = Counter()
    for ref in references:
        for gram, cnt in ngram_counts(ref, n).items():
            if cnt > best[gram]:
                best[gram] = cnt
    clipped = sum(min(cnt, best[gram]) for gram, cnt in hyp.items())
    return clipped, total


def closest_ref_length(references, hyp_len: int) -> int:
    """Reference length nearest hyp_len; ties go to the shorter reference."""
    lengths = [len(r) for r in references]
    if not lengths:
        raise ContractError("need at least one reference")
    return min(lengths, key=lambda L: (abs(L - hyp_len), L))


def _pooled_bleu(segments, n: int, smoothing: str, epsilon: float) -> float:
    clipped = [0] * n
    totals = [0] * n
    c = 0
    r = 0
    for hyp, refs in segments:
        if not refs:
            raise ContractError("segment with no references")
        c += len(hyp)
        r += closest_ref_length(refs, len(hyp))
        for k in range(1, n + 1):
            cl, tot = modified_ngram_precision(hyp, refs, k)
            clipped[k - 1] += cl
            totals[k - 1] += tot
    if c == 0:
        return 0.0
    log_sum = 0.0
    for cl, tot in zip(clipped, totals):
        if cl > 0 and tot > 0:
            p = cl / tot
        elif smoothing == "epsilon":
            p = epsilon
        else:
            return 0.0
        log_sum += math.log(p)
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(log_sum / n)


def corpus_bleu(segments, n: int = 4) -> float:
    """Pooled BLEU-n over (hypothesis, references) segments. No smoothing:
    any order with zero pooled matches makes the whole score 0."""
    segments = list(segments)
    if not segments:
        raise ContractError("corpus_bleu needs at least one segment")
    return _pooled_bleu(segments, n, "none", 0.0)


def sentence_bleu(hypothesis, references, config: BleuConfig = BleuConfig(),
                  n: int = 4) -> float:
    """Single-segment BLEU-n; config.smoothing applies. Empty hypothesis is 0."""
    if not hypothesis:
        return 0.0
    return _pooled_bleu([(list(hypothesis), [list(r) for r in references])],
                        n, config.smoothing, config.epsilon)


# ---------------------------------------------------------------------------
# greedy decoding


def _strip_ids(row: np.ndarray) -> list[int]:
    out = []
    for i in row:
        i = int(i)
        if i == END_ID:
            break
        if i in (PAD_ID, START_ID):
            continue
        out.append(i)
    return out


def greedy_decode_batch(model: Model, features: Tensor, max_len: int) -> list[list[int]]:
    """Greedy argmax decoding for a whole feature batch at once.

    Every step re-runs the decoder on the full prefix (no incremental
    cache). Ties pick the lowest id. Rows stop at <end>; output excludes
    <start>/<end>, so each caption has at most max_len - 1 ids.
    """
    if not 2 <= max_len <= model.config.seq_len:
        raise ContractError(f"max_len {max_len} outside [2, {model.config.seq_len}]")
    g = Graph(record=False)
    memory = model.encode(g, features)
    b = features.shape[0]
    prefix = np.full((b, 1), START_ID, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    while prefix.shape[1] < max_len and not done.all():
        logits = model.decode(Graph(record=False), prefix, memory)
        nxt = logits.data[:, -1, :].argmax(axis=1).astype(np.int64)
        nxt[done] = PAD_ID
        done |= nxt == END_ID
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return [_strip_ids(prefix[i, 1:]) for i in range(b)]


def greedy_decode(model: Model, features: Tensor, max_len: int) -> list[int]:
    """Single-image greedy decode; features is one [feat_len, feat_dim] grid."""
    if features.data.ndim == 2:
        features = Tensor(features.data[None, ...])
    return greedy_decode_batch(model, features, max_len)[0]


def decode_dataset(model: Model, dataset, max_len: int | None = None,
                   batch_size: int = 64) -> dict[str, list[int]]:
    """Greedy captions for every distinct image, keyed by image id."""
    max_len = max_len or model.config.seq_len
    image_ids = sorted(dataset.image_ids())
    out: dict[str, list[int]] = {}
    for lo in range(0, len(image_ids), batch_size):
        chunk = image_ids[lo:lo + batch_size]
        for image_id in chunk:
            if image_id not in dataset.features:
                raise DatasetError(f"no feature grid for image {image_id}")
        grids = Tensor(np.stack([dataset.features[i].grid for i in chunk]))
        for image_id, ids in zip(chunk, greedy_decode_batch(model, grids, max_len)):
            out[image_id] = ids
    return out


# ---------------------------------------------------------------------------
# test-set evaluation


def evaluate_test_set(model: Model, dataset, vocab: Vocab, report_path=None,
                      config: BleuConfig = BleuConfig(),
                      ) -> tuple[tuple[float, float, float, float], list[CaptionResult]]:
    """Caption every test image, score BLEU-1..4, optionally write the report.

    Report rows are ordered by image_id; per-image scores use sentence
    smoothing, the final #CORPUS row pools counts with no smoothing.
    """
    refs_by_image = {image_id: [_strip_ids(ids) for ids in ref_ids]
                     for image_id, ref_ids in dataset.references().items()}
    hyps = decode_dataset(model, dataset)

    results: list[CaptionResult] = []
    segments = []
    for image_id in sorted(hyps):
        hyp_ids = hyps[image_id]
        ref_ids = refs_by_image[image_id]
        per_image = tuple(sentence_bleu(hyp_ids, ref_ids, config, n) for n in range(1, 5))
        segments.append((hyp_ids, ref_ids))
        results.append(CaptionResult(
            image_id=image_id,
            hypothesis=[vocab.token(i) for i in hyp_ids],
            references=[[vocab.token(i) for i in r] for r in ref_ids],
            bleu=per_image,
        ))
    corpus = tuple(corpus_bleu(segments, n) for n in range(1, 5))

    if report_path is not None:
        lines = ["image_id,hypothesis,bleu1,bleu2,bleu3,bleu4"]
        for res in results:
            scores = ",".join(f"{b:.6f}" for b in res.bleu)
            lines.append(f'{res.image_id},"{" ".join(res.hypothesis)}",{scores}')
        lines.append("#CORPUS,," + ",".join(f"{b:.6f}" for b in corpus))
        Path(report_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    return corpus, results
