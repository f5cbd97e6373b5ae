"""Token, sequence and masking primitives.

Sequences are plain tuples of ints. Tokens are ``0..V-1`` and the mask token is
the sentinel ``V`` (one past the vocabulary), so a masked sequence over a
vocabulary of size ``V`` reads as a base-``V+1`` numeral.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence as Seq

import numpy as np

Sequence = tuple[int, ...]
MaskedSequence = tuple[int, ...]
IndexSet = tuple[int, ...]


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


@dataclass(frozen=True)
class Vocab:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary needs at least 2 tokens, got {self.size}")

    @property
    def mask(self) -> int:
        return self.size

    def check_clean(self, x: Seq[int]) -> None:
        for v in x:
            if not 0 <= v < self.size:
                raise ContractError(f"token {v} outside vocabulary of size {self.size}")


@dataclass(frozen=True)
class TimeGrid:
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")

    @property
    def times(self) -> np.ndarray:
        return 1.0 - np.arange(self.K + 1) / self.K

    def t(self, j: int) -> float:
        return 1.0 - j / self.K


def fully_masked(length: int, vocab_size: int, prompt: Seq[int] = ()) -> MaskedSequence:
    """Fully masked state of ``length`` with the prompt kept in front."""
    return tuple(prompt) + (vocab_size,) * (length - len(prompt))


def partition_indices(z: Seq[int], vocab_size: int) -> tuple[IndexSet, IndexSet]:
    um = tuple(i for i, v in enumerate(z) if v != vocab_size)
    msk = tuple(i for i, v in enumerate(z) if v == vocab_size)
    return um, msk


def masked_indices(z: Seq[int], vocab_size: int) -> IndexSet:
    return tuple(i for i, v in enumerate(z) if v == vocab_size)


def num_unmasked(z: Seq[int], vocab_size: int, prompt_len: int = 0) -> int:
    return sum(1 for v in z[prompt_len:] if v != vocab_size)


def apply_reveal(z: Seq[int], i: int, v: int, vocab_size: int) -> MaskedSequence:
    if z[i] != vocab_size:
        raise ContractError(f"position {i} is already unmasked")
    if not 0 <= v < vocab_size:
        raise ContractError(f"token {v} outside vocabulary of size {vocab_size}")
    out = list(z)
    out[i] = v
    return tuple(out)


def agrees(z: Seq[int], x0: Seq[int], vocab_size: int) -> bool:
    """True when ``x0`` matches ``z`` on every unmasked position."""
    return all(a == vocab_size or a == b for a, b in zip(z, x0))


def iid_mask(x0: Seq[int], t: float, rng: np.random.Generator, vocab_size: int) -> MaskedSequence:
    """Mask each position of ``x0`` independently with probability ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"masking probability must lie in [0, 1], got {t}")
    hide = rng.random(len(x0)) < t
    return tuple(vocab_size if h else int(v) for v, h in zip(x0, hide))


def pattern_probability(z: Seq[int], x0: Seq[int], t: float, vocab_size: int) -> float:
    """Probability that i.i.d. masking at level ``t`` turns ``x0`` into ``z``."""
    if not agrees(z, x0, vocab_size):
        return 0.0
    n_um = sum(1 for v in z if v != vocab_size)
    return (1.0 - t) ** n_um * t ** (len(z) - n_um)


def context_key(z: Seq[int], vocab_size: int) -> int:
    """Encode a masked sequence as a base-(V+1) integer."""
    key = 0
    for v in z:
        key = key * (vocab_size + 1) + int(v)
    return key


def decode_context_key(key: int, length: int, vocab_size: int) -> MaskedSequence:
    base = vocab_size + 1
    out = []
    for _ in range(length):
        key, r = divmod(key, base)
        out.append(r)
    if key:
        raise ValueError("context key does not fit the requested length")
    return tuple(reversed(out))


def format_state(z: Seq[int], vocab_size: int) -> str:
    sep = "" if vocab_size <= 10 else " "
    return sep.join("m" if v == vocab_size else str(v) for v in z)


def derive_rng(master_seed: int, tag: str, *index: int) -> np.random.Generator:
    """Independent stream for ``(master_seed, tag, index...)``.

    The tag enters as its CRC-32, so streams do not depend on execution order.
    """
    words = [int(master_seed), zlib.crc32(tag.encode())] + [int(i) for i in index]
    return np.random.default_rng(np.random.SeedSequence(words))
