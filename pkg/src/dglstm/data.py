"""Corpus reading, vocabularies and BPTT batching for language modelling."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

UNK, BOS, EOS = "<unk>", "<s>", "</s>"
RESERVED = (UNK, BOS, EOS)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2

_ASCII_WS = re.compile(r"[ \t\n\r\f\v]+")


def tokenize(line: str, level: str) -> list[str]:
    """Split on ASCII whitespace (word level) or into code points (char level)."""
    if level == "word":
        return [tok for tok in _ASCII_WS.split(line) if tok]
    if level == "char":
        return list(line)
    raise ValueError(f"level must be 'char' or 'word', got {level!r}")


class Vocabulary:
    """Bijection between token strings and ids ``0..size-1``.

    Ids 0, 1 and 2 are always ``<unk>``, ``<s>`` and ``</s>``.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        for tok in self.tokens:
            if "\n" in tok:
                raise ValueError(f"token {tok!r} cannot be stored one per line")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("".join(tok + "\n" for tok in self.tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
        return cls(_split_lines(text))


def _split_lines(text: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def build_vocab(lines: Iterable[str], level: str, min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Frequency-ranked vocabulary.

    Tokens seen at least ``min_count`` times are kept, most frequent first with
    ties broken lexicographically. ``max_size`` caps the total size, reserved
    ids included.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    lines = list(lines)
    if not lines:
        raise ValueError("cannot build a vocabulary from empty input")
    counts = Counter()
    for line in lines:
        counts.update(tok for tok in tokenize(line, level) if tok not in RESERVED)
    ranked = sorted((tok for tok, n in counts.items() if n >= min_count), key=lambda tok: (-counts[tok], tok))
    if max_size is not None:
        if max_size < len(RESERVED):
            raise ValueError(f"max_size must be at least {len(RESERVED)}")
        ranked = ranked[: max_size - len(RESERVED)]
    return Vocabulary(list(RESERVED) + ranked)


def encode(vocab: Vocabulary, line: str, level: str) -> list[int]:
    return [BOS_ID] + [vocab.id(tok) for tok in tokenize(line, level)] + [EOS_ID]


def decode(vocab: Vocabulary, ids: Iterable[int], level: str) -> str:
    """Inverse of :func:`encode` for in-vocabulary text; boundary markers are dropped."""
    toks = [vocab.tokens[i] for i in ids if i not in (BOS_ID, EOS_ID)]
    return ("" if level == "char" else " ").join(toks)


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[tuple[int, ...], ...]
    level: str
    vocab_size: int

    def __post_init__(self):
        for seq in self.sequences:
            if len(seq) < 2:
                raise ValueError("every sequence needs at least the boundary pair")
            if max(seq) >= self.vocab_size or min(seq) < 0:
                raise ValueError("sequence id outside the vocabulary")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_predictions(self) -> int:
        return sum(len(s) - 1 for s in self.sequences)


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return _split_lines(fh.read())


def make_corpus(lines: Iterable[str], vocab: Vocabulary, level: str) -> Corpus:
    return Corpus(tuple(tuple(encode(vocab, line, level)) for line in lines), level, len(vocab))


def load_corpus(path, vocab: Vocabulary, level: str) -> Corpus:
    return make_corpus(read_lines(path), vocab, level)


# ---------------------------------------------------------------------------
# batching


class Chunk(NamedTuple):
    """One BPTT window of a single sequence.

    ``carry`` is false on the first window of a sequence, where the recurrent
    state must start from zero.
    """

    inputs: list[int]
    targets: list[int]
    carry: bool


def _chunks(seq: Sequence[int], bptt_len: int) -> list[Chunk]:
    inputs, targets = list(seq[:-1]), list(seq[1:])
    return [
        Chunk(inputs[k:k + bptt_len], targets[k:k + bptt_len], k > 0)
        for k in range(0, len(inputs), bptt_len)
    ]


def epoch_order(n: int, seed: int, epoch: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def make_batches(corpus: Corpus, bptt_len: int, seed: int | None = None, epoch: int = 0) -> list[Chunk]:
    """Shift-by-one input/target windows, sequence by sequence.

    Sequence order is a seeded permutation (fresh per epoch); ``seed=None``
    keeps corpus order.
    """
    if bptt_len < 1:
        raise ValueError("bptt_len must be >= 1")
    order = range(len(corpus)) if seed is None else epoch_order(len(corpus), seed, epoch)
    out = []
    for k in order:
        out.extend(_chunks(corpus.sequences[k], bptt_len))
    return out


class Batch(NamedTuple):
    """Time-major window over several sequences at once.

    ``inputs``, ``targets`` and ``mask`` have shape ``(steps, batch)``; padded
    positions carry id 0 and mask 0.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    carry: bool


def make_minibatches(corpus: Corpus, bptt_len: int, batch_size: int, seed: int | None = None,
                     epoch: int = 0) -> list[Batch]:
    """Group sequences ``batch_size`` at a time and cut each group into BPTT windows.

    State is carried across the windows of a group and reset between groups.
    With ``batch_size=1`` this is :func:`make_batches` with a mask attached.
    """
    if bptt_len < 1 or batch_size < 1:
        raise ValueError("bptt_len and batch_size must be >= 1")
    order = np.arange(len(corpus)) if seed is None else epoch_order(len(corpus), seed, epoch)
    out = []
    for start in range(0, len(order), batch_size):
        group = [corpus.sequences[k] for k in order[start:start + batch_size]]
        steps = max(len(s) for s in group) - 1
        inputs = np.zeros((steps, len(group)), dtype=np.int64)
        targets = np.zeros_like(inputs)
        mask = np.zeros(inputs.shape)
        for b, seq in enumerate(group):
            n = len(seq) - 1
            inputs[:n, b] = seq[:-1]
            targets[:n, b] = seq[1:]
            mask[:n, b] = 1.0
        for k in range(0, steps, bptt_len):
            sl = slice(k, k + bptt_len)
            out.append(Batch(inputs[sl], targets[sl], mask[sl], k > 0))
    return out
