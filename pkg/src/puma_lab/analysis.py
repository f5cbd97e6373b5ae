"""Exact and Monte Carlo checks of the PUMA guarantees.

* marginal agreement: teacher-forced chain vs idealized inference, by DP over states;
* minimizer preservation: visitation-weighted conditional frequencies vs the exact posterior;
* sample complexity on the Z_m family: Chernoff information, MAP estimation and
  the random-masking vs oracle-trajectory sweep.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence as Seq

import numpy as np
from scipy.optimize import minimize_scalar

from .chains import oracle_scores, run_idealized_inference, run_teacher_forced_chain
from .core import MaskedSequence, Sequence, derive_rng, fully_masked, num_unmasked
from .dist import TabularDistribution, ZmSpec, build_zm, sample, sample_indices, zm_family
from .oracle import exact_posterior, posterior_table
from .policy import PolicySpec, reveal_set_distribution
from .stages import reveal_count_distribution

StateDistribution = dict[MaskedSequence, float]
# (x0, z, grid step) -> list of (reveal set, probability)
Selector = Callable[[Sequence, MaskedSequence, int], list[tuple[tuple[int, ...], float]]]

MAX_STATES = 10**6
CHAIN_KINDS = ("idealized", "teacher-forced")


class StateSpaceTooLarge(RuntimeError):
    """Exact DP would exceed the state cap; use Monte Carlo instead."""


def _count_distribution(policy: PolicySpec, z, j: int, K: int, V: int, prompt_len: int) -> dict[int, float]:
    if policy.count is not None:
        return {policy.count: 1.0}
    U = num_unmasked(z, V, prompt_len)
    return reveal_count_distribution(U, j, K, len(z) - prompt_len)


def policy_selector(dist: TabularDistribution, policy: PolicySpec, K: int, prompt_len: int = 0) -> Selector:
    """Reveal-set law of ``policy`` driven by exact-oracle scores; ignores ``x0``."""
    V = dist.vocab_size

    def sel(x0, z, j):
        table = posterior_table(dist, z)
        out = []
        for c, pc in _count_distribution(policy, z, j, K, V, prompt_len).items():
            out += [(S, pc * ps) for S, ps in reveal_set_distribution(policy, table, z, c, prompt_len)]
        return out

    return sel


def leaking_selector(dist: TabularDistribution, policy: PolicySpec, K: int, prompt_len: int = 0) -> Selector:
    """A deliberately leaking forward process (test fixture).

    At the first grid step the chain holds (reveals nothing) whenever the
    hidden first non-prompt token of ``x0`` is 0; otherwise it follows
    ``policy``. Visits to the fully masked state then depend on a hidden token.
    """
    honest = policy_selector(dist, policy, K, prompt_len)

    def sel(x0, z, j):
        if j == 0 and x0[prompt_len] == 0:
            return [((), 1.0)]
        return honest(x0, z, j)

    return sel


def _check_size(n: int, max_states: int) -> None:
    if n > max_states:
        raise StateSpaceTooLarge(f"{n} reachable states exceed the cap of {max_states}; use monte-carlo mode")


def _reveal_from(x0, z, S) -> MaskedSequence:
    out = list(z)
    for i in S:
        out[i] = x0[i]
    return tuple(out)


def teacher_forced_joint(
    dist: TabularDistribution,
    K: int,
    selector: Selector,
    prompt: Seq[int] = (),
    max_states: int = MAX_STATES,
) -> list[dict[tuple[int, MaskedSequence], float]]:
    """Law of ``(support index of x0, z_{t_j})`` for ``j = 0..K``, tracking ``x0`` explicitly."""
    V, P = dist.vocab_size, len(prompt)
    start = fully_masked(dist.length, V, prompt)
    cur = {}
    for k, (x0, p) in enumerate(dist.enumerate()):
        if tuple(x0[:P]) == tuple(prompt):
            cur[(k, start)] = p
    mass = sum(cur.values())
    cur = {key: p / mass for key, p in cur.items()}
    out = [cur]
    for j in range(K):
        nxt: dict[tuple[int, MaskedSequence], float] = {}
        for (k, z), p in cur.items():
            if V not in z[P:]:
                nxt[(k, z)] = nxt.get((k, z), 0.0) + p
                continue
            x0 = dist.sequences[k]
            for S, ps in selector(x0, z, j):
                key = (k, _reveal_from(x0, z, S))
                nxt[key] = nxt.get(key, 0.0) + p * ps
        _check_size(len(nxt), max_states)
        out.append(nxt)
        cur = nxt
    return out


def _sequential_fill(dist: TabularDistribution, z: MaskedSequence, S: Seq[int]) -> dict[MaskedSequence, float]:
    """Law of ``z`` after filling ``S`` position by position from the exact posterior."""
    states = {z: 1.0}
    for i in S:
        nxt: dict[MaskedSequence, float] = {}
        for s, p in states.items():
            post = exact_posterior(dist, s, i)
            for v in np.flatnonzero(post):
                key = s[:i] + (int(v),) + s[i + 1:]
                nxt[key] = nxt.get(key, 0.0) + p * float(post[v])
        states = nxt
    return states


def exact_marginals(
    chain_kind: str,
    dist: TabularDistribution,
    policy: PolicySpec,
    K: int,
    prompt: Seq[int] = (),
    max_states: int = MAX_STATES,
) -> list[StateDistribution]:
    """Exact law of ``z_{t_j}`` for every ``j = 0..K``.

    The teacher-forced route carries ``x0`` through the DP and marginalizes at
    the end; the idealized route samples tokens from the exact posterior.
    """
    P = len(prompt)
    if chain_kind == "teacher-forced":
        joint = teacher_forced_joint(dist, K, policy_selector(dist, policy, K, P), prompt, max_states)
        out = []
        for step in joint:
            marg: StateDistribution = {}
            for (_, z), p in step.items():
                marg[z] = marg.get(z, 0.0) + p
            out.append(marg)
        return out
    if chain_kind != "idealized":
        raise ValueError(f"unknown chain kind {chain_kind!r}; expected one of {CHAIN_KINDS}")
    V = dist.vocab_size
    select = policy_selector(dist, policy, K, P)
    cur: StateDistribution = {fully_masked(dist.length, V, prompt): 1.0}
    out = [cur]
    for j in range(K):
        nxt: StateDistribution = {}
        for z, p in cur.items():
            if V not in z[P:]:
                nxt[z] = nxt.get(z, 0.0) + p
                continue
            for S, ps in select(None, z, j):
                for z2, pz in _sequential_fill(dist, z, S).items():
                    nxt[z2] = nxt.get(z2, 0.0) + p * ps * pz
        _check_size(len(nxt), max_states)
        out.append(nxt)
        cur = nxt
    return out


def exact_marginal(chain_kind, dist, policy, K, j, prompt=(), max_states=MAX_STATES) -> StateDistribution:
    if not 0 <= j <= K:
        raise ValueError(f"grid step {j} outside 0..{K}")
    return exact_marginals(chain_kind, dist, policy, K, prompt, max_states)[j]


def tv_distance(p: Mapping, q: Mapping) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass
class MarginalReport:
    mode: str
    tv: list[float]
    tolerance: list[float]

    @property
    def max_tv(self) -> float:
        return max(self.tv)

    @property
    def passed(self) -> bool:
        return all(t < tol for t, tol in zip(self.tv, self.tolerance))


EXACT_TV_TOL = 1e-10


def _empirical(states: Iterable[MaskedSequence]) -> StateDistribution:
    counts: dict[MaskedSequence, int] = {}
    n = 0
    for z in states:
        counts[z] = counts.get(z, 0) + 1
        n += 1
    return {z: c / n for z, c in counts.items()}


def verify_marginal_agreement(
    dist: TabularDistribution,
    policy: PolicySpec,
    K: int,
    mode: str = "exact",
    n_runs: int = 100_000,
    seed: int = 0,
    prompt: Seq[int] = (),
) -> MarginalReport:
    """TV between the two chains' state laws at every grid step.

    Monte Carlo mode runs ``n_runs`` chains of each kind on independent streams
    and uses the tolerance ``4 * sqrt(#states / n_runs)``.
    """
    if mode == "exact":
        tf = exact_marginals("teacher-forced", dist, policy, K, prompt)
        ideal = exact_marginals("idealized", dist, policy, K, prompt)
        tvs = [tv_distance(a, b) for a, b in zip(tf, ideal)]
        return MarginalReport("exact", tvs, [EXACT_TV_TOL] * len(tvs))
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    P = len(prompt)
    scores = oracle_scores(dist)
    tf_states: list[list[MaskedSequence]] = [[] for _ in range(K + 1)]
    id_states: list[list[MaskedSequence]] = [[] for _ in range(K + 1)]
    for r in range(n_runs):
        rng = derive_rng(seed, "marginal-tf", r)
        x0 = sample(dist, rng)
        traj = run_teacher_forced_chain(x0, scores, policy, K, rng, dist.vocab_size, P)
        for j, z in enumerate(traj.states):
            tf_states[j].append(z)
        traj = run_idealized_inference(dist, policy, K, derive_rng(seed, "marginal-ideal", r), prompt)
        for j, z in enumerate(traj.states):
            id_states[j].append(z)
    tvs, tols = [], []
    for a, b in zip(tf_states, id_states):
        pa, pb = _empirical(a), _empirical(b)
        tvs.append(tv_distance(pa, pb))
        tols.append(4.0 * math.sqrt(len(set(pa) | set(pb)) / n_runs))
    return MarginalReport("monte-carlo", tvs, tols)


# ---------------------------------------------------------------------------
# minimizer preservation

FORWARD_KINDS = ("iid", "teacher-forced", "leaking")


def iid_visitation(dist: TabularDistribution, weighting: str = "none", prompt_len: int = 0) -> dict[tuple[int, MaskedSequence], float]:
    """Exact weight of each ``(x0, z)`` pair under i.i.d. masking with ``t ~ U[0, 1]``.

    ``weighting="inv_t"`` folds in the ``1/t`` loss weight.
    """
    V = dist.vocab_size
    L = dist.length - prompt_len
    out = {}
    for k, (x0, p) in enumerate(dist.enumerate()):
        for bits in range(1, 2**L):
            hide = [(bits >> b) & 1 for b in range(L)]
            n_mask = sum(hide)
            # integral over t of t^n_mask (1-t)^(L-n_mask), optionally divided by t
            a = n_mask - 1 if weighting == "inv_t" else n_mask
            w = math.factorial(a) * math.factorial(L - n_mask) / math.factorial(a + L - n_mask + 1)
            z = tuple(x0[:prompt_len]) + tuple(V if h else v for v, h in zip(x0[prompt_len:], hide))
            out[(k, z)] = out.get((k, z), 0.0) + p * w
    return out


def chain_visitation(
    dist: TabularDistribution, K: int, selector: Selector, prompt: Seq[int] = ()
) -> dict[tuple[int, MaskedSequence], float]:
    """Expected number of visits to each ``(x0, z)`` with ``z`` still masked."""
    V, P = dist.vocab_size, len(prompt)
    out: dict[tuple[int, MaskedSequence], float] = {}
    for step in teacher_forced_joint(dist, K, selector, prompt)[:K]:
        for key, p in step.items():
            if V in key[1][P:]:
                out[key] = out.get(key, 0.0) + p
    return out


@dataclass
class MinimizerReport:
    forward_kind: str
    max_deviation: float
    contexts: int
    worst_context: Optional[MaskedSequence] = None

    def passed(self, tol: float = 1e-10) -> bool:
        return self.max_deviation < tol


def minimizer_from_visitation(
    dist: TabularDistribution, visits: Mapping[tuple[int, MaskedSequence], float]
) -> dict[MaskedSequence, dict[int, np.ndarray]]:
    """Closed-form minimizer of the visitation-weighted cross-entropy: per
    masked context and position, the weighted frequency of each target token."""
    V = dist.vocab_size
    acc: dict[MaskedSequence, np.ndarray] = {}
    for (k, z), w in visits.items():
        if w <= 0:
            continue
        row = acc.setdefault(z, np.zeros((dist.length, V)))
        x0 = dist.sequences[k]
        for i, v in enumerate(x0):
            row[i, v] += w
    out = {}
    for z, counts in acc.items():
        out[z] = {i: counts[i] / counts[i].sum() for i in range(dist.length) if z[i] == V}
    return out


def verify_minimizer_preservation(
    dist: TabularDistribution,
    forward_kind: str,
    policy: PolicySpec | None = None,
    K: int = 2,
    prompt: Seq[int] = (),
    weighting: str = "none",
) -> MinimizerReport:
    """Largest L-infinity gap between the loss minimizer implied by a forward
    process and the exact unmasking posterior, over every visited context."""
    P = len(prompt)
    policy = policy or PolicySpec("max_prob", count=1)
    if forward_kind == "iid":
        visits = iid_visitation(dist, weighting, P)
    elif forward_kind == "teacher-forced":
        visits = chain_visitation(dist, K, policy_selector(dist, policy, K, P), prompt)
    elif forward_kind == "leaking":
        visits = chain_visitation(dist, K, leaking_selector(dist, policy, K, P), prompt)
    else:
        raise ValueError(f"unknown forward kind {forward_kind!r}; expected one of {FORWARD_KINDS}")
    worst, worst_z = 0.0, None
    minimizer = minimizer_from_visitation(dist, visits)
    for z, rows in minimizer.items():
        for i, freq in rows.items():
            dev = float(np.max(np.abs(freq - exact_posterior(dist, z, i))))
            if dev > worst:
                worst, worst_z = dev, z
    return MinimizerReport(forward_kind, worst, len(minimizer), worst_z)


# ---------------------------------------------------------------------------
# Chernoff information and MAP estimation


def _aligned(P, Q) -> tuple[np.ndarray, np.ndarray]:
    def as_map(D):
        if isinstance(D, TabularDistribution):
            return dict(D.enumerate())
        if isinstance(D, Mapping):
            return dict(D)
        return dict(enumerate(np.asarray(D, dtype=float)))

    p, q = as_map(P), as_map(Q)
    keys = sorted(set(p) | set(q))
    return np.array([p.get(k, 0.0) for k in keys]), np.array([q.get(k, 0.0) for k in keys])


def chernoff_coefficient(P, Q, s: float) -> float:
    p, q = _aligned(P, Q)
    return float(np.sum(p ** (1.0 - s) * q**s))


def chernoff_information(P, Q, tol: float = 1e-8) -> float:
    """``-log min_s sum_z P(z)^(1-s) Q(z)^s`` over ``s in [1e-4, 1 - 1e-4]``."""
    p, q = _aligned(P, Q)
    if np.array_equal(p, q):
        return 0.0

    def coef(s):
        return float(np.sum(p ** (1.0 - s) * q**s))

    res = minimize_scalar(coef, bounds=(1e-4, 1.0 - 1e-4), method="bounded", options={"xatol": tol})
    best = min(res.fun, coef(0.5))
    return max(0.0, -math.log(best))


class ImpossibleSampleError(ValueError):
    """A sample has zero probability under every parameter."""


def map_estimate(samples: Iterable[Seq[int]], family: Mapping[int, TabularDistribution]) -> int:
    """Parameter maximizing the sample log-likelihood; ties go to the smallest."""
    thetas = sorted(family)
    total = np.zeros(len(thetas))
    for x in samples:
        probs = np.array([family[t].prob(tuple(x)) for t in thetas])
        if not probs.any():
            raise ImpossibleSampleError(f"sample {tuple(x)} is impossible under every parameter")
        with np.errstate(divide="ignore"):
            total += np.log(probs)
    return thetas[int(np.argmax(total))]


def _family_logp(family: Mapping[int, TabularDistribution]) -> tuple[list[int], np.ndarray]:
    thetas = sorted(family)
    ref = family[thetas[0]].sequences
    for t in thetas[1:]:
        if family[t].sequences != ref:
            raise ValueError("family members must share one support ordering")
    with np.errstate(divide="ignore"):
        return thetas, np.log(np.stack([family[t].probs for t in thetas]))


# ---------------------------------------------------------------------------
# sample complexity on Z_m

ORACLE_POLICY = PolicySpec("max_prob", count=1)


def oracle_trajectory_samples(
    spec: ZmSpec, T: int, rng: np.random.Generator, dist: TabularDistribution | None = None
) -> list[tuple[MaskedSequence, Sequence]]:
    """Training pairs from ``T`` teacher-forced chains under the exact-oracle
    max-prob policy (one reveal per step, so each chain yields ``d+1`` pairs)."""
    dist = dist or build_zm(spec)
    scores = oracle_scores(dist)
    pairs = []
    for _ in range(T):
        x0 = sample(dist, rng)
        traj = run_teacher_forced_chain(x0, scores, ORACLE_POLICY, spec.length, rng, spec.m)
        pairs += [(z, x0) for z in traj.states[:-1]]
    return pairs


def informative_observations(spec: ZmSpec, pairs: Iterable[tuple[MaskedSequence, Sequence]]) -> list[Sequence]:
    """Clean sequences of the pairs whose context shows every latent and hides ``Y``."""
    out = []
    for z, x0 in pairs:
        if z[spec.answer_index] == spec.m and all(z[i] != spec.m for i in spec.latent_indices):
            out.append(x0)
    return out


@dataclass
class ComplexityRow:
    d: int
    method: str
    samples: int
    error_rate: float
    seed: int
    censored: bool = False

    CSV_HEADER = "d,method,samples,error_rate,seed"

    def to_csv(self) -> str:
        return f"{self.d},{self.method},{self.samples},{self.error_rate!r},{self.seed}"


METHODS = ("random-masking", "puma-oracle")


def random_masking_error(
    spec: ZmSpec,
    n: int,
    q: float,
    trials: int,
    rng: np.random.Generator,
    family: Mapping[int, TabularDistribution] | None = None,
    uniform_t: bool = False,
) -> float:
    """MAP misidentification frequency from ``n`` i.i.d.-masked samples.

    Only informative samples (all latents visible, ``Y`` masked with its
    target known) enter the likelihood. The true parameter is drawn uniformly
    per trial.
    """
    family = family or zm_family(spec)
    thetas, logp = _family_logp(family)
    truth = rng.integers(len(thetas), size=trials)
    idx = np.stack([sample_indices(family[thetas[t]], rng, n) for t in truth])
    if uniform_t:
        level = rng.random((trials, n, 1))
    else:
        level = q
    hidden = rng.random((trials, n, spec.length)) < level
    informative = hidden[:, :, spec.answer_index] & ~hidden[:, :, list(spec.latent_indices)].any(axis=2)
    ll = np.where(informative[None], logp[:, idx], 0.0).sum(axis=2)  # (|Theta|, trials)
    est = np.argmax(ll, axis=0)
    return float(np.mean(est != truth))


def puma_oracle_error(
    spec: ZmSpec,
    T: int,
    trials: int,
    rng: np.random.Generator,
    family: Mapping[int, TabularDistribution] | None = None,
) -> float:
    """MAP misidentification frequency from ``T`` oracle trajectories."""
    family = family or zm_family(spec)
    thetas = sorted(family)
    wrong = 0
    for _ in range(trials):
        theta = thetas[int(rng.integers(len(thetas)))]
        pairs = oracle_trajectory_samples(spec.with_theta(theta), T, rng, family[theta])
        if map_estimate(informative_observations(spec, pairs), family) != theta:
            wrong += 1
    return wrong / trials


def _next_n(n: int, growth: float) -> int:
    return max(n + 1, math.ceil(n * growth))


def sample_complexity_experiment(
    d_range: Seq[int],
    m: int = 4,
    eta: float = 0.1,
    q: float = 0.5,
    delta: float = 0.1,
    seeds: int = 10,
    trials: int = 200,
    master_seed: int = 0,
    budget_samples: int = 50_000,
    budget_trajectories: int = 200,
    growth: float = 1.1,
    uniform_t: bool = False,
    methods: Seq[str] = METHODS,
) -> list[ComplexityRow]:
    """Smallest training-set size whose MAP error over ``trials`` runs is at
    most ``delta``, per ``d``, method and seed. Rows that hit the budget are
    flagged ``censored``."""
    rows = []
    for d in d_range:
        spec = ZmSpec(m=m, d=d, eta=eta)
        family = zm_family(spec)
        for method in methods:
            for s in range(seeds):
                rng = derive_rng(master_seed, f"complexity/{method}", d, s)
                rows.append(_sweep(spec, method, q, delta, trials, rng, family, s,
                                   budget_samples, budget_trajectories, growth, uniform_t))
    return rows


def _sweep(spec, method, q, delta, trials, rng, family, seed, budget_samples, budget_traj, growth, uniform_t):
    if method == "random-masking":
        n = 1
        while True:
            err = random_masking_error(spec, n, q, trials, rng, family, uniform_t)
            if err <= delta:
                return ComplexityRow(spec.d, method, n, err, seed)
            if n >= budget_samples:
                return ComplexityRow(spec.d, method, n, err, seed, censored=True)
            n = min(budget_samples, _next_n(n, growth))
    if method == "puma-oracle":
        for T in range(1, budget_traj + 1):
            err = puma_oracle_error(spec, T, trials, rng, family)
            if err <= delta:
                return ComplexityRow(spec.d, method, spec.length * T, err, seed)
        return ComplexityRow(spec.d, method, spec.length * budget_traj, err, seed, censored=True)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def random_masking_lower_bound(d: int, q: float, delta: float, n_params: int = 2) -> float:
    """Samples random masking needs before its error can drop to ``delta``."""
    return math.log((1.0 - 1.0 / n_params) / delta) / (q * (1.0 - q) ** d)


def trajectory_upper_bound(kappa: float, delta: float, n_params: int = 2) -> float:
    """Oracle trajectories that suffice for MAP error at most ``delta``."""
    return (math.log(n_params - 1) + math.log(1.0 / delta)) / kappa


def zm_chernoff_closed_form(m: int, eta: float) -> float:
    """Chernoff coefficient of the two Z_m hypotheses evaluated at ``s = 1/2``."""
    return 2.0 * math.sqrt((1.0 - eta) * eta / (m - 1)) + (m - 2) * eta / (m - 1)


def linear_fit_r2(x: Seq[float], y: Seq[float]) -> tuple[float, float]:
    """Least-squares slope and R^2."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return float(slope), float(r2)


def median_by_d(rows: Iterable[ComplexityRow], method: str) -> dict[int, float]:
    by: dict[int, list[int]] = {}
    for r in rows:
        if r.method == method:
            by.setdefault(r.d, []).append(r.samples)
    return {d: float(np.median(v)) for d, v in sorted(by.items())}


# ---------------------------------------------------------------------------
# learned sampler


def learned_output_distribution(
    model,
    policy: PolicySpec,
    K: int,
    prompt: Seq[int] = (),
    greedy: bool = False,
    max_states: int = 200_000,
) -> StateDistribution:
    """Exact law of the final state of learned inference (tokens of one step
    drawn independently from the model's per-position categoricals)."""
    V, P = model.vocab_size, len(prompt)
    cur: StateDistribution = {fully_masked(model.length, V, prompt): 1.0}
    for j in range(K):
        nxt: StateDistribution = {}
        for z, p in cur.items():
            if V not in z[P:]:
                nxt[z] = nxt.get(z, 0.0) + p
                continue
            table = model(z)
            rows = table.as_dict()
            for c, pc in _count_distribution(policy, z, j, K, V, P).items():
                for S, ps in reveal_set_distribution(policy, table, z, c, P):
                    options = []
                    for i in S:
                        row = rows[i]
                        if greedy:
                            options.append([(int(np.argmax(row)), 1.0)])
                        else:
                            options.append([(int(v), float(row[v])) for v in np.flatnonzero(row)])
                    for combo in itertools.product(*options):
                        out = list(z)
                        w = p * pc * ps
                        for i, (v, pv) in zip(S, combo):
                            out[i] = v
                            w *= pv
                        key = tuple(out)
                        nxt[key] = nxt.get(key, 0.0) + w
        _check_size(len(nxt), max_states)
        cur = nxt
    return cur
