"""Built-in health checks behind the `selftest` CLI subcommand.

Three suites: gradcheck (autodiff vs central differences), causality (a
token edit never changes logits at earlier positions), and bleu (the scorer
vs a naive loop-based counter written independently of captioner).
"""

from __future__ import annotations

import math

import numpy as np

from . import captioner
from .ndcore import Graph, Tensor, grad_check
from .transformer import Model, ModelConfig, ModelParams

GRAD_TOL = 1e-4


def _toy_model(dtype=np.float64, seed=3) -> Model:
    cfg = ModelConfig(vocab_size=8, feat_len=4, feat_dim=6, d_model=8,
                      n_heads=2, seq_len=6, ffn_dim=16)
    return Model(cfg, seed=seed, dtype=dtype)


def gradcheck_suite() -> tuple[bool, str]:
    """64-bit finite-difference checks on chained primitives."""
    rng = np.random.default_rng(11)
    worst = 0.0

    w = Tensor(rng.normal(size=(5, 4)), dtype=np.float64)
    mix = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)

    def softmax_chain(g: Graph, x: Tensor) -> Tensor:
        return g.sum(g.mul(g.softmax(g.matmul(x, w), axis=-1), mix))

    worst = max(worst, grad_check(softmax_chain, Tensor(rng.normal(size=(3, 5)), dtype=np.float64)))

    gain = Tensor(rng.normal(size=(6,)), dtype=np.float64)
    bias = Tensor(rng.normal(size=(6,)), dtype=np.float64)
    mix2 = Tensor(rng.normal(size=(4, 6)), dtype=np.float64)

    def norm_chain(g: Graph, x: Tensor) -> Tensor:
        return g.sum(g.mul(g.layer_norm(x, gain, bias), mix2))

    worst = max(worst, grad_check(norm_chain, Tensor(rng.normal(size=(4, 6)), dtype=np.float64)))

    targets = rng.integers(0, 8, size=(2, 3))
    mask = np.array([[True, True, False], [True, True, True]])

    def ce(g: Graph, x: Tensor) -> Tensor:
        return g.cross_entropy(x, targets, mask)

    worst = max(worst, grad_check(ce, Tensor(rng.normal(size=(2, 3, 8)), dtype=np.float64)))

    model = _toy_model()
    feats = Tensor(rng.normal(size=(2, 4, 6)), dtype=np.float64)
    tokens = rng.integers(0, 8, size=(2, 4))
    tgt = rng.integers(0, 8, size=(2, 4))
    msk = np.ones((2, 4), dtype=bool)

    def model_loss(g: Graph, emb: Tensor) -> Tensor:
        # the check flows through the whole encoder/decoder via the embedding
        tensors = dict(model.params.items())
        tensors["token_embedding"] = emb
        swapped = Model(model.config, params=ModelParams(tensors))
        logits = swapped.decode(g, tokens, swapped.encode(g, feats))
        return g.cross_entropy(logits, tgt, msk)

    worst = max(worst, grad_check(model_loss, model.params["token_embedding"]))

    return worst < GRAD_TOL, f"max rel err {worst:.2e} (tol {GRAD_TOL:.0e})"


def causality_suite(trials: int = 10) -> tuple[bool, str]:
    """Perturbing token t must leave logits at positions < t bit-identical."""
    model = _toy_model(dtype=np.float32, seed=5)
    cfg = model.config
    rng = np.random.default_rng(17)
    for trial in range(trials):
        seq = rng.integers(0, cfg.vocab_size, size=(1, cfg.seq_len))
        feats = Tensor(rng.normal(size=(1, cfg.feat_len, cfg.feat_dim)).astype(np.float32))
        g = Graph(record=False)
        memory = model.encode(g, feats)
        base = model.decode(Graph(record=False), seq, memory).data
        pos = int(rng.integers(1, cfg.seq_len))
        changed = seq.copy()
        changed[0, pos] = (changed[0, pos] + 1 + rng.integers(cfg.vocab_size - 1)) % cfg.vocab_size
        after = model.decode(Graph(record=False), changed, memory).data
        if not np.array_equal(base[:, :pos, :], after[:, :pos, :]):
            return False, f"trial {trial}: logits before position {pos} changed"
    return True, f"{trials} perturbation trials bit-identical"


# -- naive BLEU oracle, deliberately loop-based and Counter-free ------------


def _naive_ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def naive_bleu(segments, n: int, smooth_eps: float | None = None) -> float:
    """Brute-force BLEU used only as a cross-check."""
    clipped = [0] * n
    totals = [0] * n
    c = 0
    r = 0
    for hyp, refs in segments:
        c += len(hyp)
        best_len = None
        for ref in refs:
            if best_len is None or abs(len(ref) - len(hyp)) < abs(best_len - len(hyp)) \
                    or (abs(len(ref) - len(hyp)) == abs(best_len - len(hyp)) and len(ref) < best_len):
                best_len = len(ref)
        r += best_len
        for k in range(1, n + 1):
            grams = _naive_ngrams(hyp, k)
            totals[k - 1] += len(grams)
            for gram in set(grams):
                have = grams.count(gram)
                allowed = 0
                for ref in refs:
                    cnt = _naive_ngrams(ref, k).count(gram)
                    if cnt > allowed:
                        allowed = cnt
                clipped[k - 1] += min(have, allowed)
    if c == 0:
        return 0.0
    logs = 0.0
    for cl, tot in zip(clipped, totals):
        if cl > 0 and tot > 0:
            logs += math.log(cl / tot)
        elif smooth_eps is not None:
            logs += math.log(smooth_eps)
        else:
            return 0.0
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(logs / n)


def random_bleu_cases(count: int, seed: int = 23):
    """Small random segments over a 6-token alphabet, single segment each."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        hyp = [int(x) for x in rng.integers(0, 6, size=rng.integers(0, 9))]
        refs = [[int(x) for x in rng.integers(0, 6, size=rng.integers(1, 9))]
                for _ in range(int(rng.integers(1, 4)))]
        cases.append((hyp, refs))
    return cases


def bleu_suite(cases: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for hyp, refs in random_bleu_cases(cases):
        for n in (1, 2, 3, 4):
            mine = captioner.corpus_bleu([(hyp, refs)], n) if hyp else 0.0
            ref = naive_bleu([(hyp, refs)], n) if hyp else 0.0
            worst = max(worst, abs(mine - ref))
            mine_s = captioner.sentence_bleu(hyp, refs, n=n)
            ref_s = naive_bleu([(hyp, refs)], n, smooth_eps=1e-9) if hyp else 0.0
            worst = max(worst, abs(mine_s - ref_s))
    clip = captioner.modified_ngram_precision(
        "the the the the the the the".split(),
        ["the cat is on the mat".split()], 1)
    if clip != (2, 7):
        return False, f"clipping hand case returned {clip}, expected (2, 7)"
    return worst <= 1e-9, f"{cases} random cases, max |diff| {worst:.2e}"


SUITES = (("gradcheck", gradcheck_suite),
          ("causality", causality_suite),
          ("bleu", bleu_suite))


def run_all(log=print) -> bool:
    """Run every suite; one PASS/FAIL line each. True when all pass."""
    ok = True
    for name, fn in SUITES:
        passed, detail = fn()
        ok &= passed
        log(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})")
    return ok
