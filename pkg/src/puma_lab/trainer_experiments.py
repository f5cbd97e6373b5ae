"""PUMA vs vanilla training runs on tabular learners, with evaluation metrics."""

from __future__ import annotations

import dataclasses
import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence as Seq

import numpy as np

from .analysis import StateSpaceTooLarge, learned_output_distribution, tv_distance
from .chains import run_learned_inference, run_teacher_forced_chain, unmask_step_map, trajectory_distance
from .core import derive_rng
from .dist import TabularDistribution, sample
from .learner import TabularMDM, init_buffer, puma_train_step, vanilla_train_step
from .oracle import posterior_table
from .policy import PolicySpec
from .stages import KSchedule

METHODS = ("vanilla", "puma")
METRIC_HEADER = "step,train_loss,gen_accuracy,posterior_l1,traj_distance"


@dataclass(frozen=True)
class RunConfig:
    dist: TabularDistribution
    method: str = "puma"
    policy: PolicySpec = PolicySpec("max_prob", threshold=0.9)
    schedule: Optional[KSchedule] = None
    batch_size: int = 32
    lr: float = 0.1
    total_steps: int = 200
    eval_every: int = 10
    eval_policy: PolicySpec = PolicySpec("max_prob", count=1)
    eval_K: Optional[int] = None
    eval_samples: int = 500
    eval_greedy: bool = False
    traj_probes: int = 100
    seed: int = 0
    prompt_len: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.total_steps < 1 or self.eval_every < 1:
            raise ValueError("total_steps and eval_every must be positive")
        if self.total_steps % self.eval_every:
            raise ValueError(f"eval_every {self.eval_every} does not divide total_steps {self.total_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        self.policy.check_length(self.effective_length)
        self.eval_policy.check_length(self.effective_length)

    @property
    def effective_length(self) -> int:
        return self.dist.length - self.prompt_len

    @property
    def k_schedule(self) -> KSchedule:
        return self.schedule or KSchedule(K0=self.effective_length)

    @property
    def inference_K(self) -> int:
        return self.eval_K or self.effective_length

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class MetricRow:
    step: int
    train_loss: float
    gen_accuracy: float
    posterior_l1: float
    traj_distance: float

    def to_csv(self) -> str:
        return ",".join(
            [str(self.step)] + [repr(float(x)) for x in
                                (self.train_loss, self.gen_accuracy, self.posterior_l1, self.traj_distance)]
        )


def metrics_csv(rows: Seq[MetricRow]) -> str:
    return "\n".join([METRIC_HEADER] + [r.to_csv() for r in rows]) + "\n"


# ---------------------------------------------------------------------------
# evaluation


def answer_contexts(dist: TabularDistribution) -> dict[tuple[int, ...], float]:
    """Contexts that reveal everything except the answer position, with their probability."""
    a = dist.answer_index
    out: dict[tuple[int, ...], float] = {}
    for x, p in dist.enumerate():
        z = x[:a] + (dist.vocab_size,) + x[a + 1:]
        out[z] = out.get(z, 0.0) + p
    return out


def _unique_argmax(p: np.ndarray) -> Optional[int]:
    best = int(np.argmax(p))
    return best if np.sum(p == p[best]) == 1 else None


def answer_accuracy(model: TabularMDM, dist: TabularDistribution) -> float:
    """Probability-weighted exact match at the answer position: the model's
    strict argmax must equal the posterior mode. Ties count as misses."""
    a = dist.answer_index
    acc = 0.0
    for z, w in answer_contexts(dist).items():
        guess = _unique_argmax(model(z).row(a))
        if guess is not None and guess == int(np.argmax(posterior_table(dist, z).row(a))):
            acc += w
    return acc


def probe_contexts(dist: TabularDistribution, prompt_len: int = 0) -> list[tuple[int, ...]]:
    """Contexts for the posterior-L1 metric.

    Answer contexts when the distribution has an answer position; otherwise
    every masked state consistent with the support.
    """
    if dist.answer_index is not None:
        return sorted(answer_contexts(dist))
    V, L = dist.vocab_size, dist.length
    seen = set()
    for x in dist.sequences:
        for bits in range(1, 2 ** (L - prompt_len)):
            seen.add(tuple(x[:prompt_len]) + tuple(
                V if (bits >> b) & 1 else v for b, v in enumerate(x[prompt_len:])))
    return sorted(seen)


def posterior_l1(model: TabularMDM, dist: TabularDistribution, contexts: Seq[tuple[int, ...]]) -> float:
    total, n = 0.0, 0
    for z in contexts:
        mt, ot = model(z), posterior_table(dist, z)
        rows = [dist.answer_index] if dist.answer_index is not None else list(ot.indices)
        for i in rows:
            total += float(np.abs(mt.row(i) - ot.row(i)).sum())
            n += 1
    return total / n


def generation_accuracy(model: TabularMDM, cfg: RunConfig, rng: np.random.Generator) -> float:
    """``1 - TV`` between the learned sampler's output law and the data law;
    exact by DP, or from ``eval_samples`` draws when the DP is too large."""
    dist = cfg.dist
    prompt = ()
    try:
        out = learned_output_distribution(model, cfg.eval_policy, cfg.inference_K, prompt, cfg.eval_greedy)
    except StateSpaceTooLarge:
        counts: dict[tuple[int, ...], float] = {}
        for _ in range(cfg.eval_samples):
            x = run_learned_inference(model, cfg.eval_policy, cfg.inference_K, rng, prompt, cfg.eval_greedy)
            counts[x] = counts.get(x, 0.0) + 1.0 / cfg.eval_samples
        out = counts
    return 1.0 - tv_distance(out, dict(dist.enumerate()))


def _traj_policy(cfg: RunConfig) -> PolicySpec:
    kind = cfg.policy.kind if cfg.policy.kind != "random" else "max_prob"
    return PolicySpec(kind, count=1, block_size=cfg.policy.block_size)


def step_maps(model: TabularMDM, probes: Seq[tuple[int, ...]], cfg: RunConfig) -> list[tuple[int, ...]]:
    """Reveal-step maps of deterministic one-per-step teacher-forced chains driven by ``model``."""
    policy = _traj_policy(cfg)
    rng = np.random.default_rng(0)  # unused: the policy is deterministic
    return [
        unmask_step_map(run_teacher_forced_chain(
            x0, model, policy, cfg.effective_length, rng, cfg.dist.vocab_size, cfg.prompt_len))
        for x0 in probes
    ]


def evaluate(model: TabularMDM, cfg: RunConfig, contexts, rng) -> tuple[float, float]:
    if cfg.dist.answer_index is not None:
        acc = answer_accuracy(model, cfg.dist)
    else:
        acc = generation_accuracy(model, cfg, rng)
    return acc, posterior_l1(model, cfg.dist, contexts)


# ---------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    rows: list[MetricRow]
    model: TabularMDM
    forward_calls: int = 0
    buffer_sizes: list[int] = field(default_factory=list)


def run_training(cfg: RunConfig, return_result: bool = False):
    """Train for ``total_steps`` and record metrics every ``eval_every`` steps
    (step 0 included). Evaluation works on a snapshot of the model."""
    dist = cfg.dist
    rng = derive_rng(cfg.seed, f"train/{cfg.method}")
    eval_rng = derive_rng(cfg.seed, "eval")
    probe_rng = derive_rng(cfg.seed, "probes")
    probes = [sample(dist, probe_rng) for _ in range(cfg.traj_probes)]
    contexts = probe_contexts(dist, cfg.prompt_len)

    model = TabularMDM(dist.length, dist.vocab_size, cfg.lr)
    buffer = None
    if cfg.method == "puma":
        buffer = init_buffer(dist, cfg.batch_size, cfg.k_schedule, rng, cfg.prompt_len)

    partial_rows: list[tuple[int, float, float, float]] = []
    maps_at: list[list[tuple[int, ...]]] = []
    losses: list[float] = []
    sizes: list[int] = []

    def record(step):
        snap = model.copy()
        acc, l1 = evaluate(snap, cfg, contexts, eval_rng)
        loss = float(np.mean(losses)) if losses else math.nan
        partial_rows.append((step, loss, acc, l1))
        maps_at.append(step_maps(snap, probes, cfg))
        losses.clear()

    record(0)
    for step in range(1, cfg.total_steps + 1):
        if buffer is not None:
            losses.append(puma_train_step(buffer, model, dist, cfg.policy, cfg.k_schedule, rng))
            sizes.append(len(buffer))
        else:
            losses.append(vanilla_train_step(model, dist, rng, cfg.batch_size, cfg.prompt_len))
        if step % cfg.eval_every == 0:
            record(step)

    final = maps_at[-1]
    rows = []
    for (step, loss, acc, l1), maps in zip(partial_rows, maps_at):
        dist_to_final = float(np.mean([trajectory_distance(u, v) for u, v in zip(maps, final)])) if final else 0.0
        rows.append(MetricRow(step, loss, acc, l1, dist_to_final))
    if return_result:
        return RunResult(rows, model, model.forward_calls, sizes)
    return rows


def first_step_reaching(rows: Seq[MetricRow], threshold: float, metric: str = "gen_accuracy") -> float:
    for r in rows:
        if getattr(r, metric) >= threshold:
            return float(r.step)
    return math.inf


class ThresholdUnreachable(RuntimeError):
    """Neither compared configuration reached the accuracy threshold."""


@dataclass
class Comparison:
    ratio: float
    steps_a: list[float]
    steps_b: list[float]

    @property
    def wins_b(self) -> int:
        """Seeds on which B reached the threshold strictly earlier than A."""
        return sum(b < a for a, b in zip(self.steps_a, self.steps_b))


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    if b == 0:
        return math.inf
    return a / b


def compare_runs(
    cfg_a: RunConfig,
    cfg_b: RunConfig,
    accuracy_threshold: float,
    seeds: Seq[int],
    metric: str = "gen_accuracy",
    runner=None,
) -> Comparison:
    """Median steps-to-threshold of A over that of B (above 1: B is faster)."""
    runner = runner or (lambda cfgs: [run_training(c) for c in cfgs])
    results = runner([c.replace(seed=s) for s in seeds for c in (cfg_a, cfg_b)])
    steps_a = [first_step_reaching(r, accuracy_threshold, metric) for r in results[0::2]]
    steps_b = [first_step_reaching(r, accuracy_threshold, metric) for r in results[1::2]]
    if all(math.isinf(s) for s in steps_a + steps_b):
        raise ThresholdUnreachable(f"no run reached {metric} >= {accuracy_threshold}")
    return Comparison(_ratio(statistics.median(steps_a), statistics.median(steps_b)), steps_a, steps_b)


def block_restricted_run(cfg: RunConfig, return_result: bool = False):
    """Run with chains and evaluation both confined to the active block."""
    bs = cfg.policy.block_size
    if bs is None:
        raise ValueError("block_restricted_run needs policy.block_size")
    if cfg.effective_length % bs:
        raise ValueError(f"block_size {bs} does not divide effective length {cfg.effective_length}")
    eval_policy = dataclasses.replace(cfg.eval_policy, block_size=bs)
    return run_training(cfg.replace(eval_policy=eval_policy), return_result)


def policy_robustness(
    model: TabularMDM,
    dist: TabularDistribution,
    kinds: Seq[str] = ("max_prob", "margin", "neg_entropy"),
    K: Optional[int] = None,
    samples: int = 500,
    seed: int = 0,
) -> dict[str, float]:
    """Generation quality of one model under several inference policies.

    With an answer position: fraction of sampled sequences whose answer equals
    the posterior mode given the sampled rest. Otherwise ``1 - TV`` to the
    data law.
    """
    K = K or dist.length
    out = {}
    for kind in kinds:
        policy = PolicySpec(kind, count=1)
        if dist.answer_index is None:
            law = learned_output_distribution(model, policy, K)
            out[kind] = 1.0 - tv_distance(law, dict(dist.enumerate()))
            continue
        rng = derive_rng(seed, f"robustness/{kind}")
        a, hits = dist.answer_index, 0
        for _ in range(samples):
            x = run_learned_inference(model, policy, K, rng)
            z = x[:a] + (dist.vocab_size,) + x[a + 1:]
            try:
                mode = int(np.argmax(posterior_table(dist, z).row(a)))
            except ValueError:
                continue
            hits += int(x[a] == mode)
        out[kind] = hits / samples
    return out
