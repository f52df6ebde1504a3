"""Word-level caption normalization, vocabulary, and id encoding."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyCaptionError, FormatError

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
SPECIALS = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

MAX_VOCAB = 13000

# ASCII punctuation, stripped entirely (not replaced by spaces).
_PUNCT = '!"#$%&\'()*+,-./:;<=>?@[\\]^_`{|}~'
_STRIP = str.maketrans("", "", _PUNCT)


def normalize_caption(raw: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace.

    Raises EmptyCaptionError when nothing survives, so callers can reject
    the record instead of silently keeping an empty caption.
    """
    s = raw.lower().translate(_STRIP)
    s = " ".join(s.split())
    if not s:
        raise EmptyCaptionError(f"caption empty after normalization: {raw!r}")
    return s


@dataclass
class CaptionRecord:
    """One (image, caption) pair; token_ids stays None until encoded."""
    image_id: str
    raw: str
    normalized: str
    token_ids: np.ndarray | None = None


class Vocab:
    """Token list where line/list position is the id; ids 0..3 are specials."""

    def __init__(self, tokens: list[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise FormatError(f"vocab must start with {SPECIALS}, got {tokens[:4]}")
        if len(tokens) > MAX_VOCAB:
            raise ConfigError(f"vocab size {len(tokens)} exceeds cap {MAX_VOCAB}")
        if len(set(tokens)) != len(tokens):
            raise FormatError("vocab contains duplicate tokens")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        """Id of token, or UNK_ID when out of vocabulary."""
        return self._ids.get(token, UNK_ID)

    def token(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise IndexError(f"token id {i} out of range [0, {len(self.tokens)})")
        return self.tokens[i]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 4:
            raise FormatError(f"vocab file {path} has fewer than 4 lines")
        return cls(lines)


def build_vocab(captions, max_size: int) -> Vocab:
    """Most frequent whitespace tokens, ties broken lexicographically.

    Deterministic in corpus content: permuting the caption list cannot
    change the result.
    """
    if max_size < 5:
        raise ConfigError(f"max_size must be >= 5 (4 specials + 1 token), got {max_size}")
    if max_size > MAX_VOCAB:
        raise ConfigError(f"max_size {max_size} exceeds cap {MAX_VOCAB}")
    counts: Counter = Counter()
    for cap in captions:
        counts.update(cap.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(SPECIALS) + [tok for tok, _ in ranked[: max_size - 4]])


def encode(normalized: str, vocab: Vocab, seq_len: int) -> np.ndarray:
    """<start> + ids + <end>, right-padded with <pad> to exactly seq_len.

    Captions longer than seq_len - 2 content tokens are truncated so <end>
    always survives.
    """
    if seq_len < 3:
        raise ConfigError(f"seq_len must be >= 3 to fit <start> x <end>, got {seq_len}")
    words = normalized.split()
    if not words:
        raise EmptyCaptionError("cannot encode an empty caption")
    words = words[: seq_len - 2]
    ids = [START_ID] + [vocab.id(w) for w in words] + [END_ID]
    ids.extend([PAD_ID] * (seq_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def decode(ids, vocab: Vocab) -> str:
    """Ids back to a space-joined string; stops at <end>, skips <start>/<pad>."""
    words = []
    for i in np.asarray(ids).reshape(-1):
        i = int(i)
        if i == END_ID:
            break
        if i in (PAD_ID, START_ID):
            continue
        words.append(vocab.token(i))
    return " ".join(words)
