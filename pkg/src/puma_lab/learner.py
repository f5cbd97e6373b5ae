"""Tabular masked-diffusion model, its loss, and the vanilla and PUMA trainers.

The model stores one ``(L, V)`` logit block per visited masked context;
contexts never updated read as zero logits, i.e. uniform predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence as Seq

import numpy as np

from .chains import step_count, teacher_forced_step
from .core import (
    ContractError,
    MaskedSequence,
    agrees,
    context_key,
    decode_context_key,
    fully_masked,
    masked_indices,
    num_unmasked,
)
from .dist import TabularDistribution, sample
from .oracle import PosteriorTable
from .policy import PolicySpec, reveal_set
from .stages import KSchedule, k_schedule, next_reveal_count, stage_of  # noqa: F401  (re-exported)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class TabularMDM:
    """Per-context softmax table trained by SGD.

    Calling the model on a masked state is the forward pass; every call is
    counted in ``forward_calls``.
    """

    def __init__(self, length: int, vocab_size: int, lr: float = 0.1):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.length = length
        self.vocab_size = vocab_size
        self.lr = lr
        self.logits: dict[MaskedSequence, np.ndarray] = {}
        self.forward_calls = 0

    def logits_for(self, z: Seq[int]) -> np.ndarray:
        row = self.logits.get(tuple(z))
        return np.zeros((self.length, self.vocab_size)) if row is None else row

    def __call__(self, z: Seq[int]) -> PosteriorTable:
        return forward(self, z)

    def copy(self) -> "TabularMDM":
        out = TabularMDM(self.length, self.vocab_size, self.lr)
        out.logits = {k: v.copy() for k, v in self.logits.items()}
        return out

    def to_text(self) -> str:
        lines = [f"# tabular-mdm length={self.length} vocab={self.vocab_size} lr={self.lr!r}"]
        for z in sorted(self.logits, key=lambda c: context_key(c, self.vocab_size)):
            key = context_key(z, self.vocab_size)
            block = self.logits[z]
            for i in masked_indices(z, self.vocab_size):
                lines.append(",".join([str(key), str(i)] + [repr(float(x)) for x in block[i]]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TabularMDM":
        lines = text.strip().splitlines()
        fields = dict(tok.split("=") for tok in lines[0].lstrip("# ").split()[1:])
        model = cls(int(fields["length"]), int(fields["vocab"]), float(fields["lr"]))
        for line in lines[1:]:
            key, i, *vals = line.split(",")
            z = decode_context_key(int(key), model.length, model.vocab_size)
            block = model.logits.setdefault(z, np.zeros((model.length, model.vocab_size)))
            block[int(i)] = [float(v) for v in vals]
        return model


def forward(model: TabularMDM, z: Seq[int]) -> PosteriorTable:
    model.forward_calls += 1
    msk = masked_indices(z, model.vocab_size)
    if not msk:
        return PosteriorTable((), np.zeros((0, model.vocab_size)))
    return PosteriorTable(msk, softmax(model.logits_for(z)[list(msk)]))


def loss_and_grad(
    model: TabularMDM, z: Seq[int], x0: Seq[int], table: PosteriorTable | None = None
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked positions and its gradient w.r.t. the
    logits of context ``z`` (an ``(L, V)`` array, zero on unmasked rows).

    Pass ``table`` to reuse an existing forward pass.
    """
    if not agrees(z, x0, model.vocab_size):
        raise ContractError(f"state {tuple(z)} disagrees with clean sequence {tuple(x0)}")
    if table is None:
        table = forward(model, z)
    if not table.indices:
        raise ContractError("loss needs at least one masked position")
    idx = list(table.indices)
    targets = np.asarray(x0)[idx]
    n = len(idx)
    picked = table.probs[np.arange(n), targets]
    loss = float(-np.mean(np.log(picked)))
    grad = np.zeros((model.length, model.vocab_size))
    rows = table.probs.copy()
    rows[np.arange(n), targets] -= 1.0
    grad[idx] = rows / n
    return loss, grad


def sgd_update(model: TabularMDM, gradients: Mapping[MaskedSequence, np.ndarray]) -> None:
    for z, g in gradients.items():
        if not g.any():
            continue
        block = model.logits.get(z)
        if block is None:
            block = model.logits[z] = np.zeros((model.length, model.vocab_size))
        block -= model.lr * g


def _accumulate(grads: dict, z: MaskedSequence, g: np.ndarray) -> None:
    if z in grads:
        grads[z] = grads[z] + g
    else:
        grads[z] = g


def vanilla_train_step(
    model: TabularMDM,
    dist: TabularDistribution,
    rng: np.random.Generator,
    batch_size: int = 1,
    prompt_len: int = 0,
) -> float:
    """One SGD step on ``batch_size`` i.i.d.-masked examples, ``t ~ U[0, 1]``.

    A draw that leaves nothing masked is redrawn (new ``t`` and mask).
    """
    V = model.vocab_size
    grads: dict[MaskedSequence, np.ndarray] = {}
    losses = []
    for _ in range(batch_size):
        x0 = sample(dist, rng)
        while True:
            t = rng.random()
            hide = rng.random(dist.length - prompt_len) < t
            if hide.any():
                break
        z = tuple(x0[:prompt_len]) + tuple(
            V if h else v for v, h in zip(x0[prompt_len:], hide)
        )
        loss, g = loss_and_grad(model, z, x0)
        losses.append(loss)
        _accumulate(grads, z, g)
    sgd_update(model, grads)
    return float(np.mean(losses))


@dataclass
class ChainState:
    x0: tuple[int, ...]
    z: MaskedSequence
    n: int
    K: int
    prompt_len: int = 0


@dataclass
class PumaBuffer:
    chains: list[ChainState]
    step: int = 0

    def __len__(self) -> int:
        return len(self.chains)


def _fresh_chain(dist: TabularDistribution, K: int, rng, prompt_len: int) -> ChainState:
    x0 = sample(dist, rng)
    return ChainState(x0, fully_masked(dist.length, dist.vocab_size, x0[:prompt_len]), 0, K, prompt_len)


def init_buffer(
    dist: TabularDistribution,
    B: int,
    schedule: KSchedule,
    rng: np.random.Generator,
    prompt_len: int = 0,
) -> PumaBuffer:
    if B < 1:
        raise ValueError(f"buffer size must be >= 1, got {B}")
    K = k_schedule(0, schedule)
    return PumaBuffer([_fresh_chain(dist, K, rng, prompt_len) for _ in range(B)])


def advance_chain(
    st: ChainState,
    table: PosteriorTable,
    policy: PolicySpec,
    vocab_size: int,
    rng: np.random.Generator,
) -> ChainState:
    """Reveal the next batch of ground-truth tokens and recompute the stage."""
    L_eff = len(st.z) - st.prompt_len
    count = step_count(policy, st.z, st.n, st.K, vocab_size, st.prompt_len, rng)
    S = reveal_set(policy, table, st.z, count, rng, st.prompt_len)
    z = teacher_forced_step(st.x0, st.z, S, vocab_size)
    n = stage_of(num_unmasked(z, vocab_size, st.prompt_len), L_eff, st.K)
    return ChainState(st.x0, z, n, st.K, st.prompt_len)


def puma_train_step(
    buffer: PumaBuffer,
    model: TabularMDM,
    dist: TabularDistribution,
    policy: PolicySpec,
    schedule: KSchedule,
    rng: np.random.Generator,
) -> float:
    """One training iteration over the streaming buffer.

    One forward per chain feeds both the loss and the confidence scores; the
    summed gradient is applied once. Finished chains are then refilled with a
    fresh ``x0`` (and the current scheduled K); the rest advance one stage.
    """
    V = model.vocab_size
    tables = [forward(model, st.z) for st in buffer.chains]
    grads: dict[MaskedSequence, np.ndarray] = {}
    losses = []
    for st, table in zip(buffer.chains, tables):
        if table.indices:
            loss, g = loss_and_grad(model, st.z, st.x0, table=table)
            losses.append(loss)
            _accumulate(grads, st.z, g)
    sgd_update(model, grads)

    K_now = k_schedule(buffer.step, schedule)
    for j, (st, table) in enumerate(zip(buffer.chains, tables)):
        if st.n == st.K:
            buffer.chains[j] = _fresh_chain(dist, K_now, rng, st.prompt_len)
        else:
            buffer.chains[j] = advance_chain(st, table, policy, V, rng)
    buffer.step += 1
    return float(np.mean(losses)) if losses else 0.0
