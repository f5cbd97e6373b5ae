"""Processes over masked states.

* teacher-forced chain: policy picks positions, ground-truth tokens of ``x0`` fill them;
* idealized inference: same policy, tokens drawn from the exact posterior;
* learned inference: same policy, tokens drawn from a model.

Every chain walks the grid ``t_j = 1 - j/K`` and starts fully masked apart
from the prompt. A score source is any callable mapping a masked state to a
:class:`PosteriorTable` (the exact oracle or a model).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Sequence as Seq

import numpy as np

from .core import ContractError, MaskedSequence, Sequence, fully_masked, num_unmasked
from .dist import TabularDistribution
from .oracle import PosteriorTable, exact_posterior, posterior_table
from .policy import PolicySpec, reveal_set
from .stages import next_reveal_count

ScoreFn = Callable[[MaskedSequence], PosteriorTable]


def oracle_scores(dist: TabularDistribution) -> ScoreFn:
    return functools.partial(posterior_table, dist)


@dataclass
class Trajectory:
    length: int
    K: int
    vocab_size: int
    prompt_len: int = 0
    states: list[MaskedSequence] = field(default_factory=list)
    events: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def final(self) -> MaskedSequence:
        return self.states[-1]

    @property
    def complete(self) -> bool:
        return self.vocab_size not in self.final

    def to_text(self) -> str:
        lines = [f"{self.length},{self.K},{self.prompt_len}"]
        lines += [f"{j},{i},{v}" for j, i, v in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, vocab_size: int, prompt: Seq[int] = ()) -> "Trajectory":
        """Rebuild states from the event log (the header does not carry the prompt tokens)."""
        rows = [line.split(",") for line in text.strip().splitlines()]
        length, K, prompt_len = (int(x) for x in rows[0])
        if len(prompt) != prompt_len:
            raise ValueError(f"expected a prompt of length {prompt_len}")
        events = [tuple(int(x) for x in r) for r in rows[1:]]
        z = list(fully_masked(length, vocab_size, prompt))
        states = [tuple(z)]
        by_step: dict[int, list[tuple[int, int]]] = {}
        for j, i, v in events:
            by_step.setdefault(j, []).append((i, v))
        for j in range(1, K + 1):
            for i, v in by_step.get(j, []):
                z[i] = v
            states.append(tuple(z))
        return cls(length, K, vocab_size, prompt_len, states, events)


def teacher_forced_step(x0: Seq[int], z: Seq[int], S: Seq[int], vocab_size: int) -> MaskedSequence:
    out = list(z)
    for i in S:
        if out[i] != vocab_size:
            raise ContractError(f"position {i} is already unmasked")
        out[i] = x0[i]
    return tuple(out)


def step_count(
    policy: PolicySpec, z: Seq[int], j: int, K: int, vocab_size: int, prompt_len: int, rng
) -> int:
    """``|S|`` for grid step ``j``: fixed by the policy or drawn by the stage rule."""
    if policy.count is not None:
        return policy.count
    return next_reveal_count(
        num_unmasked(z, vocab_size, prompt_len), j, K, len(z) - prompt_len, rng
    )


def _run(
    first: MaskedSequence,
    score_fn: ScoreFn,
    policy: PolicySpec,
    K: int,
    rng: np.random.Generator,
    vocab_size: int,
    prompt_len: int,
    fill: Callable[[MaskedSequence, PosteriorTable, tuple[int, ...]], MaskedSequence],
) -> Trajectory:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    z = first
    traj = Trajectory(len(z), K, vocab_size, prompt_len, [z], [])
    for j in range(K):
        if vocab_size in z[prompt_len:]:
            table = score_fn(z)
            count = step_count(policy, z, j, K, vocab_size, prompt_len, rng)
            S = reveal_set(policy, table, z, count, rng, prompt_len)
            z = fill(z, table, S)
            traj.events.extend((j + 1, i, z[i]) for i in S)
        traj.states.append(z)
    return traj


def run_teacher_forced_chain(
    x0: Seq[int],
    score_fn: ScoreFn,
    policy: PolicySpec,
    K: int,
    rng: np.random.Generator,
    vocab_size: int,
    prompt_len: int = 0,
) -> Trajectory:
    x0 = tuple(x0)
    start = fully_masked(len(x0), vocab_size, x0[:prompt_len])
    return _run(
        start, score_fn, policy, K, rng, vocab_size, prompt_len,
        lambda z, table, S: teacher_forced_step(x0, z, S, vocab_size),
    )


def run_idealized_inference(
    dist: TabularDistribution,
    policy: PolicySpec,
    K: int,
    rng: np.random.Generator,
    prompt: Seq[int] = (),
) -> Trajectory:
    """Inference that reveals tokens from the exact posterior.

    Positions of one step are filled one after another, each conditioned on
    the tokens already placed, so a multi-position step draws its tokens
    jointly.
    """
    V = dist.vocab_size

    def fill(z, table, S):
        for i in S:
            post = exact_posterior(dist, z, i)
            v = int(rng.choice(V, p=post))
            z = z[:i] + (v,) + z[i + 1:]
        return z

    start = fully_masked(dist.length, V, prompt)
    return _run(start, oracle_scores(dist), policy, K, rng, V, len(prompt), fill)


def run_learned_inference(
    model,
    policy: PolicySpec,
    K: int,
    rng: np.random.Generator,
    prompt: Seq[int] = (),
    greedy: bool = False,
    return_trajectory: bool = False,
):
    """Sample a sequence from a model: tokens at each step come independently
    from the model's per-position categoricals (argmax when ``greedy``)."""
    V = model.vocab_size

    def fill(z, table, S):
        out = list(z)
        rows = table.as_dict()
        for i in S:
            p = rows[i]
            out[i] = int(np.argmax(p)) if greedy else int(rng.choice(V, p=p))
        return tuple(out)

    start = fully_masked(model.length, V, prompt)
    traj = _run(start, model, policy, K, rng, V, len(prompt), fill)
    return traj if return_trajectory else traj.final


def unmask_step_map(traj: Trajectory) -> tuple[int, ...]:
    """Grid step at which each position was revealed (prompt positions: 0)."""
    if not traj.complete:
        raise ContractError("trajectory still has masked positions")
    u = [0] * traj.length
    for j, i, _ in traj.events:
        u[i] = j
    return tuple(u)


def trajectory_distance(u1: Seq[int], u2: Seq[int]) -> float:
    if len(u1) != len(u2):
        raise ValueError(f"step maps differ in length: {len(u1)} vs {len(u2)}")
    return float(np.mean(np.abs(np.asarray(u1) - np.asarray(u2))))


def final_sequence(traj: Trajectory) -> Sequence:
    if not traj.complete:
        raise ContractError("trajectory still has masked positions")
    return traj.final
