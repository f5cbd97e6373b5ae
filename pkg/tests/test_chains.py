import numpy as np
import pytest
from hypothesis import given, strategies as st

from puma_lab.chains import (
    Trajectory,
    final_sequence,
    oracle_scores,
    run_idealized_inference,
    run_learned_inference,
    run_teacher_forced_chain,
    teacher_forced_step,
    trajectory_distance,
    unmask_step_map,
)
from puma_lab.core import ContractError
from puma_lab.dist import ZmSpec, build_zm, point_mass, three_point_asymmetric, two_point_uniform
from puma_lab.learner import TabularMDM
from puma_lab.policy import PolicySpec

M2, M4 = 2, 4
ONE = PolicySpec("max_prob", count=1)


class OracleModel:
    """Exact posterior tables behind the model interface."""

    def __init__(self, dist):
        self.length, self.vocab_size = dist.length, dist.vocab_size
        self._scores = oracle_scores(dist)

    def __call__(self, z):
        return self._scores(z)


class TestTeacherForcedStep:
    def test_examples(self):
        assert teacher_forced_step((0, 1), (M2, M2), (0,), 2) == (0, M2)
        assert teacher_forced_step((0, 1), (M2, M2), (0, 1), 2) == (0, 1)
        assert teacher_forced_step((0, 1), (M2, M2), (), 2) == (M2, M2)

    def test_overlap(self):
        with pytest.raises(ContractError):
            teacher_forced_step((0, 1), (0, M2), (0,), 2)


class TestTeacherForcedChain:
    def test_single_stage_full_reveal(self, rng):
        dist = three_point_asymmetric()
        traj = run_teacher_forced_chain((0, 1, 1), oracle_scores(dist), PolicySpec(), 1, rng, 2)
        assert traj.states == [(M2,) * 3, (0, 1, 1)]

    def test_two_point_hand_simulation(self, rng):
        dist = two_point_uniform()
        traj = run_teacher_forced_chain((0, 0), oracle_scores(dist), ONE, 2, rng, 2)
        assert traj.states == [(M2, M2), (0, M2), (0, 0)]
        assert traj.events == [(1, 0, 0), (2, 1, 0)]

    def test_zm_latents_first(self, rng):
        dist = build_zm(ZmSpec(4, 2, 0.1))
        for _ in range(50):
            x0 = dist.sequences[rng.choice(len(dist), p=dist.probs)]
            traj = run_teacher_forced_chain(x0, oracle_scores(dist), ONE, 3, rng, M4)
            assert unmask_step_map(traj)[2] == 3

    def test_prompt_kept(self, rng):
        dist = three_point_asymmetric()
        traj = run_teacher_forced_chain((1, 1, 0), oracle_scores(dist), ONE, 2, rng, 2, prompt_len=1)
        assert all(s[0] == 1 for s in traj.states)
        assert unmask_step_map(traj)[0] == 0

    def test_non_leaking_visit_probability(self):
        # x0 = (0,0,1) and (0,1,1) agree on z = (0, m, 1); visits must not depend on the hidden token
        dist = three_point_asymmetric()
        policy = PolicySpec("random", count=1)
        z = (0, M2, 1)
        rates = []
        for x0 in [(0, 0, 1), (0, 1, 1)]:
            rng = np.random.default_rng(99)
            hits = sum(z in run_teacher_forced_chain(x0, oracle_scores(dist), policy, 3, rng, 2).states
                       for _ in range(4000))
            rates.append(hits / 4000)
        assert rates[0] == rates[1]


class TestIdealized:
    def test_point_mass(self, rng):
        dist = point_mass((1, 0, 1), 2)
        for _ in range(5):
            assert final_sequence(run_idealized_inference(dist, ONE, 3, rng)) == (1, 0, 1)

    def test_two_point_first_step(self):
        rng = np.random.default_rng(1)
        dist = two_point_uniform()
        firsts = [run_idealized_inference(dist, ONE, 2, rng).states[1] for _ in range(4000)]
        assert set(firsts) == {(0, M2), (1, M2)}
        assert abs(firsts.count((0, M2)) / 4000 - 0.5) < 3 * np.sqrt(0.25 / 4000)

    def test_final_always_in_support(self):
        rng = np.random.default_rng(2)
        dist = build_zm(ZmSpec(4, 3, 0.1))
        for _ in range(10_000):
            traj = run_idealized_inference(dist, PolicySpec("max_prob", threshold=0.8), 2, rng)
            assert dist.prob(traj.final) > 0


class TestLearned:
    def test_oracle_model_matches_idealized_law(self):
        dist = three_point_asymmetric()
        rng = np.random.default_rng(4)
        n = 20_000
        outs = [run_learned_inference(OracleModel(dist), ONE, 3, rng) for _ in range(n)]
        for x, p in dist.enumerate():
            assert abs(outs.count(x) / n - p) < 4 * np.sqrt(p * (1 - p) / n)

    def test_greedy_converged_point_mass(self, rng):
        model = TabularMDM(3, 2)
        target = (1, 0, 1)
        # hand-set logits for every context on the deterministic greedy path
        z = (M2,) * 3
        for i in range(3):
            block = np.zeros((3, 2))
            block[np.arange(3), list(target)] = 10.0
            model.logits[z] = block
            z = z[:i] + (target[i],) + z[i + 1:]
        assert run_learned_inference(model, PolicySpec("positional", count=1), 3, rng, greedy=True) == target

    def test_greedy_is_deterministic(self):
        model = TabularMDM(3, 2)
        a = run_learned_inference(model, ONE, 3, np.random.default_rng(0), greedy=True, return_trajectory=True)
        b = run_learned_inference(model, ONE, 3, np.random.default_rng(1), greedy=True, return_trajectory=True)
        assert a.states == b.states


class TestStepMaps:
    def test_examples(self):
        t = Trajectory(2, 2, 2, 0, [(M2, M2), (0, M2), (0, 1)], [(1, 0, 0), (2, 1, 1)])
        assert unmask_step_map(t) == (1, 2)
        full = Trajectory(3, 1, 2, 0, [(M2,) * 3, (0, 1, 0)], [(1, 0, 0), (1, 1, 1), (1, 2, 0)])
        assert unmask_step_map(full) == (1, 1, 1)

    def test_incomplete(self):
        t = Trajectory(2, 1, 2, 0, [(M2, M2), (0, M2)], [(1, 0, 0)])
        with pytest.raises(ContractError):
            unmask_step_map(t)

    def test_distance_examples(self):
        assert trajectory_distance((1, 2, 3, 4), (1, 2, 3, 4)) == 0.0
        assert trajectory_distance((1, 2, 3, 4), (1, 3, 2, 4)) == 0.5
        with pytest.raises(ValueError):
            trajectory_distance((1,), (1, 2))

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=8), st.data())
    def test_distance_symmetric(self, u1, data):
        u2 = data.draw(st.lists(st.integers(0, 9), min_size=len(u1), max_size=len(u1)))
        assert trajectory_distance(u1, u2) == trajectory_distance(u2, u1)


class TestTextRecord:
    def test_round_trip(self, rng):
        dist = build_zm(ZmSpec(4, 3, 0.1))
        x0 = dist.sequences[5]
        traj = run_teacher_forced_chain(x0, oracle_scores(dist), PolicySpec(), 3, rng, M4, prompt_len=1)
        text = traj.to_text()
        assert text.splitlines()[0] == "4,3,1"
        back = Trajectory.from_text(text, M4, prompt=x0[:1])
        assert back.states == traj.states and back.events == traj.events

    def test_wrong_prompt(self):
        with pytest.raises(ValueError):
            Trajectory.from_text("2,2,1\n1,1,0\n", 2, prompt=())
