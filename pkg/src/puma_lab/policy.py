"""Unmasking policies: confidence scores, top-k selection, thresholding, blocks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence as Seq

import numpy as np

from .core import ContractError, IndexSet
from .oracle import PosteriorTable

KINDS = ("max_prob", "margin", "neg_entropy", "random", "positional")
SCORE_KINDS = ("max_prob", "margin", "neg_entropy")

# Scores are compared after rounding so that float noise between equal
# posteriors cannot override the lowest-index tie-break.
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class PolicySpec:
    """How a chain picks positions to reveal.

    ``count=None`` means the caller supplies the reveal count (the stage rule);
    an integer pins ``|S|`` per step.
    """

    kind: str = "max_prob"
    count: Optional[int] = None
    threshold: Optional[float] = None
    block_size: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.count is not None and self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")
        if self.block_size is not None and self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")

    def check_length(self, effective_length: int) -> None:
        if self.block_size is not None and effective_length % self.block_size:
            raise ValueError(
                f"block_size {self.block_size} does not divide effective length {effective_length}"
            )

    @property
    def stochastic(self) -> bool:
        return self.kind == "random"


def score(kind: str, c: np.ndarray, rng: Optional[np.random.Generator] = None, index: int = 0) -> float:
    c = np.asarray(c, dtype=np.float64)
    if kind == "max_prob":
        return float(c.max())
    if kind == "margin":
        if c.size < 2:
            return 1.0
        top2 = np.partition(c, -2)[-2:]
        return float(top2[1] - top2[0])
    if kind == "neg_entropy":
        nz = c[c > 0]
        return float(np.sum(nz * np.log(nz)))
    if kind == "random":
        if rng is None:
            raise ValueError("random scores need an rng")
        return float(rng.random())
    if kind == "positional":
        return float(-index)
    raise ValueError(f"unknown policy kind {kind!r}")


def _vocab_size(table: PosteriorTable) -> int:
    return table.probs.shape[1]


def block_restrict(policy: PolicySpec, z: Seq[int], vocab_size: int, prompt_len: int = 0) -> IndexSet:
    """Masked positions eligible for selection.

    With a block size, only the first block (counted from the end of the
    prompt) that still holds a mask is eligible.
    """
    msk = tuple(i for i in range(prompt_len, len(z)) if z[i] == vocab_size)
    if policy.block_size is None or not msk:
        return msk
    block = (msk[0] - prompt_len) // policy.block_size
    lo = prompt_len + block * policy.block_size
    hi = lo + policy.block_size
    return tuple(i for i in msk if lo <= i < hi)


def _ranked(policy: PolicySpec, table: PosteriorTable, cand: IndexSet) -> list[int]:
    rows = table.as_dict()
    keyed = []
    for i in cand:
        s = round(score(policy.kind, rows[i]), SCORE_DECIMALS)
        keyed.append((-s, i))
    keyed.sort()
    return [i for _, i in keyed]


def select(
    policy: PolicySpec,
    table: PosteriorTable,
    z: Seq[int],
    count: int,
    rng: Optional[np.random.Generator] = None,
    prompt_len: int = 0,
) -> IndexSet:
    """Top-``count`` masked positions by score; ties go to the lowest index."""
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    cand = block_restrict(policy, z, _vocab_size(table), prompt_len)
    if not cand:
        raise ContractError("no masked position left to select")
    c = min(count, len(cand))
    if policy.kind == "positional":
        return tuple(cand[:c])
    if policy.kind == "random":
        if rng is None:
            raise ValueError("random policy needs an rng")
        picked = rng.choice(len(cand), size=c, replace=False)
        return tuple(sorted(cand[k] for k in picked))
    return tuple(sorted(_ranked(policy, table, cand)[:c]))


def selection_distribution(
    policy: PolicySpec,
    table: PosteriorTable,
    z: Seq[int],
    count: int,
    prompt_len: int = 0,
) -> list[tuple[IndexSet, float]]:
    """Every set ``select`` can return, with its probability."""
    if policy.kind != "random":
        return [(select(policy, table, z, count, None, prompt_len), 1.0)]
    cand = block_restrict(policy, z, _vocab_size(table), prompt_len)
    if not cand:
        raise ContractError("no masked position left to select")
    c = min(count, len(cand))
    p = 1.0 / math.comb(len(cand), c)
    return [(S, p) for S in itertools.combinations(cand, c)]


def threshold_augment(
    selected: Seq[int],
    table: PosteriorTable,
    z: Seq[int],
    tau: float,
    candidates: Optional[Seq[int]] = None,
) -> IndexSet:
    """Add every masked position whose max-prob confidence exceeds ``tau``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {tau}")
    allowed = set(table.indices if candidates is None else candidates)
    extra = {i for i, c in zip(table.indices, table.confidences()) if c > tau and i in allowed}
    return tuple(sorted(set(selected) | extra))


def reveal_set(
    policy: PolicySpec,
    table: PosteriorTable,
    z: Seq[int],
    count: int,
    rng: Optional[np.random.Generator] = None,
    prompt_len: int = 0,
) -> IndexSet:
    """Selection followed by confidence fast-forwarding when a threshold is set."""
    S = select(policy, table, z, count, rng, prompt_len)
    if policy.threshold is None:
        return S
    cand = block_restrict(policy, z, _vocab_size(table), prompt_len)
    return threshold_augment(S, table, z, policy.threshold, cand)


def reveal_set_distribution(
    policy: PolicySpec,
    table: PosteriorTable,
    z: Seq[int],
    count: int,
    prompt_len: int = 0,
) -> list[tuple[IndexSet, float]]:
    out = selection_distribution(policy, table, z, count, prompt_len)
    if policy.threshold is None:
        return out
    cand = block_restrict(policy, z, _vocab_size(table), prompt_len)
    return [(threshold_augment(S, table, z, policy.threshold, cand), p) for S, p in out]
