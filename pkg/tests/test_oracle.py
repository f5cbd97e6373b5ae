import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import brute_posterior
from puma_lab.core import ContractError, iid_mask
from puma_lab.dist import ZmSpec, build_tabular, build_zm, three_point_asymmetric, two_point_uniform
from puma_lab.oracle import ImpossibleContextError, confidence, exact_posterior, posterior_table

M2 = 2
M4 = 4


def masked_states(dist):
    """Every masked state consistent with at least one support sequence."""
    V = dist.vocab_size
    out = set()
    for x in dist.sequences:
        for hide in itertools.product([0, 1], repeat=dist.length):
            if any(hide):
                out.add(tuple(V if h else v for v, h in zip(x, hide)))
    return sorted(out)


class TestExactPosterior:
    def test_two_point_determined(self):
        assert np.allclose(exact_posterior(two_point_uniform(), (0, M2), 1), [1.0, 0.0])

    def test_two_point_symmetric(self):
        assert np.allclose(exact_posterior(two_point_uniform(), (M2, M2), 0), [0.5, 0.5])

    def test_unmasked_index(self):
        with pytest.raises(ContractError):
            exact_posterior(two_point_uniform(), (0, M2), 0)

    def test_impossible_context(self):
        with pytest.raises(ImpossibleContextError):
            posterior_table(build_tabular(2, 2, {(0, 0): 1.0}), (1, M2))

    @pytest.mark.parametrize("dist", [two_point_uniform(), three_point_asymmetric(), build_zm(ZmSpec(4, 2, 0.1))])
    def test_matches_brute_force(self, dist):
        for z in masked_states(dist):
            table = posterior_table(dist, z)
            for i in table.indices:
                assert np.allclose(table.row(i), brute_posterior(dist, z, i), atol=1e-14)
                assert table.row(i).sum() == pytest.approx(1.0, abs=1e-12)

    def test_collapse_with_one_latent(self):
        fam = {th: build_zm(ZmSpec(4, 2, 0.1, th)) for th in (0, 2)}
        for u1 in (0, 2):
            z = (u1, M4, M4)
            assert np.allclose(exact_posterior(fam[0], z, 2), exact_posterior(fam[2], z, 2), atol=1e-15)

    @given(st.integers(2, 4), st.data())
    def test_collapse_any_strict_subset(self, d, data):
        fam = {th: build_zm(ZmSpec(4, d, 0.1, th)) for th in (0, 2)}
        shown = data.draw(st.lists(st.booleans(), min_size=d, max_size=d).filter(lambda b: not all(b)))
        vals = data.draw(st.lists(st.sampled_from([0, 2]), min_size=d, max_size=d))
        z = tuple(v if s else M4 for v, s in zip(vals, shown)) + (M4,)
        assert np.allclose(exact_posterior(fam[0], z, d), exact_posterior(fam[2], z, d), atol=1e-14)

    def test_all_latents_distinguish(self):
        fam = {th: build_zm(ZmSpec(4, 2, 0.1, th)) for th in (0, 2)}
        z = (0, 2, M4)
        assert not np.allclose(exact_posterior(fam[0], z, 2), exact_posterior(fam[2], z, 2))


class TestTable:
    def test_clean_state_is_empty(self):
        t = posterior_table(two_point_uniform(), (0, 0))
        assert t.indices == () and t.probs.shape == (0, 2)

    def test_fully_masked_gives_marginals(self):
        dist = three_point_asymmetric()
        t = posterior_table(dist, (M2,) * 3)
        for i in range(3):
            assert np.allclose(t.row(i), dist.marginal(i))

    def test_zm_fully_masked_latents(self):
        t = posterior_table(build_zm(ZmSpec(4, 2, 0.1)), (M4,) * 3)
        for i in (0, 1):
            assert np.allclose(t.row(i), [0.5, 0, 0.5, 0])

    def test_memoized(self):
        dist = two_point_uniform()
        assert posterior_table(dist, (M2, M2)) is posterior_table(dist, [M2, M2])


class TestConfidence:
    def test_uniform(self):
        assert confidence(np.full(4, 0.25)) == 0.25

    def test_zm_values(self):
        dist = build_zm(ZmSpec(4, 3, 0.1))
        # Y with every latent shown
        assert confidence(exact_posterior(dist, (0, 2, 0, M4), 3)) == pytest.approx(0.9, abs=1e-12)
        expected = 0.5 * 0.9 + 0.5 * 0.1 / 3
        for z in [(M4, M4, M4, M4), (0, M4, 2, M4), (0, 2, M4, M4)]:
            assert confidence(exact_posterior(dist, z, 3)) == pytest.approx(expected, abs=1e-12)
            assert expected < 0.5
        for z in [(M4, M4, M4, M4), (0, M4, 2, M4)]:
            for i in range(3):
                if z[i] == M4:
                    assert confidence(exact_posterior(dist, z, i)) == pytest.approx(0.5, abs=1e-12)


class TestTimeAgnostic:
    def test_iid_frequencies_independent_of_t(self):
        dist = three_point_asymmetric()
        z = (0, M2, M2)
        target = exact_posterior(dist, z, 1)
        for t in (0.3, 0.7):
            rng = np.random.default_rng(int(t * 10))
            hits = np.zeros(2)
            for k in rng.choice(3, size=40_000, p=dist.probs):
                x0 = dist.sequences[k]
                if iid_mask(x0, t, rng, 2) == z:
                    hits[x0[1]] += 1
            freq = hits / hits.sum()
            assert np.allclose(freq, target, atol=4 * np.sqrt(0.25 / hits.sum()))

    def test_sampled_reveals_stay_consistent(self, rng):
        dist = build_zm(ZmSpec(4, 3, 0.1))
        for _ in range(200):
            z = (M4,) * 4
            for i in rng.permutation(4):
                v = rng.choice(4, p=exact_posterior(dist, z, int(i)))
                z = z[:i] + (int(v),) + z[i + 1:]
            assert dist.prob(z) > 0
