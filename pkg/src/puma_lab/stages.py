"""Stage bookkeeping for progressive unmasking and the K schedule.

A chain with ``K`` stages and ``L_eff`` revealable positions sits at stage
``n`` when its unmasked count lies in ``[L_eff*n/K, L_eff*(n+1)/K]``; a shared
boundary goes to the lower stage and a fully revealed chain is at stage ``K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def stage_of(unmasked: int, effective_length: int, K: int) -> int:
    if unmasked >= effective_length:
        return K
    # smallest n with unmasked <= L_eff*(n+1)/K
    return max(0, -(-unmasked * K // effective_length) - 1)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def reveal_count_from_ratio(r: float, unmasked: int, effective_length: int) -> int:
    """Newly revealed tokens needed to reach the target fraction ``r``."""
    remaining = effective_length - unmasked
    target = _round_half_up(effective_length * min(r, 1.0))
    return min(remaining, max(1, target - unmasked))


def _ratio_interval(n: int, K: int) -> tuple[float, float]:
    return (n + 1) / K, (n + 2) / K


def next_reveal_count(
    unmasked: int, n: int, K: int, effective_length: int, rng: np.random.Generator
) -> int:
    """Draw the target fraction from the next stage interval and convert it to a count."""
    if n >= K:
        raise ValueError(f"stage {n} is terminal for K={K}")
    lo, hi = _ratio_interval(n, K)
    r = min(rng.uniform(lo, hi), 1.0)
    return reveal_count_from_ratio(r, unmasked, effective_length)


def reveal_count_distribution(unmasked: int, n: int, K: int, effective_length: int) -> dict[int, float]:
    """Exact law of ``next_reveal_count`` (r uniform, then clamped at 1)."""
    if n >= K:
        raise ValueError(f"stage {n} is terminal for K={K}")
    lo, hi = _ratio_interval(n, K)
    width = hi - lo
    out: dict[int, float] = {}
    if lo >= 1.0:
        return {reveal_count_from_ratio(1.0, unmasked, effective_length): 1.0}
    if hi > 1.0:
        # the clamped tail collapses onto r = 1
        c = reveal_count_from_ratio(1.0, unmasked, effective_length)
        out[c] = (hi - 1.0) / width
        hi = 1.0
    L = effective_length
    # round(L*r) == k  <=>  r in [(k-0.5)/L, (k+0.5)/L)
    for k in range(_round_half_up(L * lo), _round_half_up(L * hi) + 1):
        a = max(lo, (k - 0.5) / L)
        b = min(hi, (k + 0.5) / L)
        if b > a:
            c = reveal_count_from_ratio(k / L, unmasked, effective_length)
            out[c] = out.get(c, 0.0) + (b - a) / width
    return out


@dataclass(frozen=True)
class KSchedule:
    K0: int = 4
    increment: int = 0
    period_steps: int = 1
    K_max: int | None = None

    def __post_init__(self):
        if self.K0 < 1:
            raise ValueError(f"K0 must be >= 1, got {self.K0}")
        if self.period_steps < 1:
            raise ValueError(f"period_steps must be >= 1, got {self.period_steps}")
        if self.increment < 0:
            raise ValueError(f"increment must be >= 0, got {self.increment}")
        if self.K_max is not None and self.K_max < self.K0:
            raise ValueError(f"K_max {self.K_max} is below K0 {self.K0}")


def k_schedule(step: int, sched: KSchedule) -> int:
    K = sched.K0 + sched.increment * (step // sched.period_steps)
    return K if sched.K_max is None else min(sched.K_max, K)
