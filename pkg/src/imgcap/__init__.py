"""Image captioning from precomputed CNN feature grids.

A minimal tape-autodiff tensor core drives a one-block transformer encoder
over feature grids and a causal transformer decoder over word ids, trained
with Adam under BLEU-4 early stopping and decoded greedily.
"""

__version__ = "0.1.0"

from .ndcore import Graph, Tensor, grad_check, zero_grads
from .textpipe import Vocab, build_vocab, decode, encode, normalize_caption
from .transformer import AttentionMask, Model, ModelConfig, ModelParams, causal_mask
from .trainer import TrainConfig, fit
from .captioner import BleuConfig, corpus_bleu, greedy_decode, sentence_bleu

__all__ = [
    "Graph", "Tensor", "grad_check", "zero_grads",
    "Vocab", "build_vocab", "decode", "encode", "normalize_caption",
    "AttentionMask", "Model", "ModelConfig", "ModelParams", "causal_mask",
    "TrainConfig", "fit",
    "BleuConfig", "corpus_bleu", "greedy_decode", "sentence_bleu",
    "__version__",
]
