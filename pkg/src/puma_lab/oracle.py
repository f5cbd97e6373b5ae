"""Exact unmasking posteriors by filtering the enumerated support."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence as Seq

import numpy as np

from .core import ContractError, IndexSet, masked_indices
from .dist import TabularDistribution


class ImpossibleContextError(ValueError):
    """The masked state is inconsistent with every support sequence."""


@dataclass(frozen=True)
class PosteriorTable:
    """Per-masked-position categoricals; row ``k`` belongs to ``indices[k]``."""

    indices: IndexSet
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def row(self, i: int) -> np.ndarray:
        return self.probs[self.indices.index(i)]

    def as_dict(self) -> dict[int, np.ndarray]:
        return {i: self.probs[k] for k, i in enumerate(self.indices)}

    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1) if len(self.indices) else np.zeros(0)


def _consistent_weights(dist: TabularDistribution, z: Seq[int]) -> np.ndarray:
    zarr = np.asarray(z)
    revealed = zarr != dist.mask
    ok = np.all(dist.array[:, revealed] == zarr[revealed], axis=1)
    w = np.where(ok, dist.probs, 0.0)
    if not w.any():
        raise ImpossibleContextError(f"state {tuple(z)} has no consistent support sequence")
    return w


def _table(dist: TabularDistribution, z: tuple[int, ...]) -> PosteriorTable:
    msk = masked_indices(z, dist.vocab_size)
    if not msk:
        return PosteriorTable((), np.zeros((0, dist.vocab_size)))
    w = _consistent_weights(dist, z)
    total = w.sum()
    rows = np.stack(
        [np.bincount(dist.array[:, i], weights=w, minlength=dist.vocab_size) / total for i in msk]
    )
    rows.setflags(write=False)
    return PosteriorTable(msk, rows)


def posterior_table(dist: TabularDistribution, z: Seq[int]) -> PosteriorTable:
    """Exact posterior at every masked position of ``z`` (memoized per distribution)."""
    z = tuple(int(v) for v in z)
    cache = dist._cache.setdefault("posterior", {})
    table = cache.get(z)
    if table is None:
        table = cache[z] = _table(dist, z)
    return table


def exact_posterior(dist: TabularDistribution, z: Seq[int], i: int) -> np.ndarray:
    if z[i] != dist.mask:
        raise ContractError(f"position {i} is not masked in {tuple(z)}")
    return posterior_table(dist, z).row(i)


def confidence(c: np.ndarray) -> float:
    return float(np.max(c))


def posterior_given(dist: TabularDistribution, z: Seq[int]) -> np.ndarray:
    """Posterior weights over the support given ``z`` (aligned with ``dist.sequences``)."""
    w = _consistent_weights(dist, z)
    return w / w.sum()
