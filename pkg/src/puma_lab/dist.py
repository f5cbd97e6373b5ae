"""Finite data distributions with exact enumeration.

Includes the latent/observation family over Z_m used by the sample-complexity
experiments: ``d`` latents uniform on ``{0, m/2}`` and an observation
``Y = theta + sum(U) + E (mod m)`` with noise ``E``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import Sequence

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularDistribution:
    """Explicit finite support in lexicographic order.

    ``answer_index`` marks a designated observation position (the ``Y`` of the
    Z_m family); generic tables leave it ``None``.
    """

    length: int
    vocab_size: int
    sequences: tuple[Sequence, ...]
    probs: np.ndarray
    answer_index: Optional[int] = None
    name: str = "table"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.sequences, dtype=np.int64).reshape(len(self.sequences), self.length)
        object.__setattr__(self, "array", arr)
        object.__setattr__(self, "index", {s: k for k, s in enumerate(self.sequences)})
        self.probs.setflags(write=False)

    @property
    def mask(self) -> int:
        return self.vocab_size

    def __len__(self) -> int:
        return len(self.sequences)

    def prob(self, x: Sequence) -> float:
        k = self.index.get(tuple(x))
        return 0.0 if k is None else float(self.probs[k])

    def enumerate(self) -> list[tuple[Sequence, float]]:
        return [(s, float(p)) for s, p in zip(self.sequences, self.probs)]

    def marginal(self, i: int) -> np.ndarray:
        return np.bincount(self.array[:, i], weights=self.probs, minlength=self.vocab_size)


def build_tabular(
    length: int,
    vocab_size: int,
    support: Mapping[Sequence, float] | Iterable[tuple[Sequence, float]],
    answer_index: Optional[int] = None,
    name: str = "table",
) -> TabularDistribution:
    items = list(support.items()) if isinstance(support, Mapping) else list(support)
    if not items:
        raise ValueError("support must be nonempty")
    if vocab_size < 2:
        raise ValueError(f"vocabulary needs at least 2 tokens, got {vocab_size}")
    weights: dict[Sequence, float] = {}
    for seq, w in items:
        seq = tuple(int(v) for v in seq)
        if len(seq) != length:
            raise ValueError(f"sequence {seq} has length {len(seq)}, expected {length}")
        if any(not 0 <= v < vocab_size for v in seq):
            raise ValueError(f"sequence {seq} has tokens outside vocabulary of size {vocab_size}")
        if not w > 0:
            raise ValueError(f"weight for {seq} must be positive, got {w}")
        if seq in weights:
            raise ValueError(f"duplicate sequence {seq}")
        weights[seq] = float(w)
    seqs = tuple(sorted(weights))
    p = np.array([weights[s] for s in seqs], dtype=np.float64)
    p /= p.sum()
    if answer_index is not None and not 0 <= answer_index < length:
        raise ValueError(f"answer index {answer_index} outside length {length}")
    return TabularDistribution(length, vocab_size, seqs, p, answer_index, name)


def enumerate_support(dist: TabularDistribution) -> list[tuple[Sequence, float]]:
    return dist.enumerate()


def sample(dist: TabularDistribution, rng: np.random.Generator) -> Sequence:
    return dist.sequences[int(rng.choice(len(dist), p=dist.probs))]


def sample_indices(dist: TabularDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` support indices at once."""
    return rng.choice(len(dist), size=n, p=dist.probs)


@dataclass(frozen=True)
class ZmSpec:
    m: int = 4
    d: int = 2
    eta: float = 0.1
    theta: int = 0
    permutation: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.m < 4 or self.m % 2:
            raise ValueError(f"m must be even and >= 4, got {self.m}")
        if self.d < 1:
            raise ValueError(f"need at least one latent, got d={self.d}")
        if not 0.0 < self.eta < 0.5:
            raise ValueError(f"eta must lie in (0, 1/2), got {self.eta}")
        if self.theta not in (0, self.delta):
            raise ValueError(f"theta must be 0 or {self.delta}, got {self.theta}")
        if self.permutation is not None and sorted(self.permutation) != list(range(self.d + 1)):
            raise ValueError(f"permutation must be a bijection on 0..{self.d}")

    @property
    def delta(self) -> int:
        return self.m // 2

    @property
    def length(self) -> int:
        return self.d + 1

    @property
    def positions(self) -> tuple[int, ...]:
        """Sequence index of ``(U_1, ..., U_d, Y)``."""
        return self.permutation if self.permutation is not None else tuple(range(self.d + 1))

    @property
    def answer_index(self) -> int:
        return self.positions[self.d]

    @property
    def latent_indices(self) -> tuple[int, ...]:
        return self.positions[: self.d]

    def noise_pmf(self) -> np.ndarray:
        pmf = np.full(self.m, self.eta / (self.m - 1))
        pmf[0] = 1.0 - self.eta
        return pmf

    def with_theta(self, theta: int) -> "ZmSpec":
        return ZmSpec(self.m, self.d, self.eta, theta, self.permutation)


def build_zm(spec: ZmSpec) -> TabularDistribution:
    noise = spec.noise_pmf()
    pos = spec.positions
    weights: dict[Sequence, float] = {}
    p_u = 0.5 ** spec.d
    for u in itertools.product((0, spec.delta), repeat=spec.d):
        base = spec.theta + sum(u)
        for e in range(spec.m):
            y = (base + e) % spec.m
            seq = [0] * spec.length
            for k, v in enumerate(u):
                seq[pos[k]] = v
            seq[pos[spec.d]] = y
            key = tuple(seq)
            weights[key] = weights.get(key, 0.0) + p_u * noise[e]
    return build_tabular(
        spec.length,
        spec.m,
        weights,
        answer_index=spec.answer_index,
        name=f"zm(m={spec.m},d={spec.d},eta={spec.eta},theta={spec.theta})",
    )


def zm_family(spec: ZmSpec) -> dict[int, TabularDistribution]:
    """Both parameter values of the family, keyed by theta."""
    return {theta: build_zm(spec.with_theta(theta)) for theta in (0, spec.delta)}


def two_point_uniform() -> TabularDistribution:
    return build_tabular(2, 2, {(0, 0): 1.0, (1, 1): 1.0}, name="two_point")


def three_point_asymmetric() -> TabularDistribution:
    return build_tabular(
        3, 2, {(0, 0, 1): 0.5, (0, 1, 1): 0.3, (1, 1, 0): 0.2}, name="three_point"
    )


def point_mass(x: Sequence, vocab_size: int) -> TabularDistribution:
    return build_tabular(len(x), vocab_size, {tuple(x): 1.0}, name="point_mass")
