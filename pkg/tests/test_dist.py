import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from puma_lab.dist import (
    ZmSpec,
    build_tabular,
    build_zm,
    point_mass,
    sample,
    sample_indices,
    three_point_asymmetric,
    two_point_uniform,
    zm_family,
)


def zm_reference(m, d, eta, theta):
    """Generative law of Z_m written out by looping over latents and noise."""
    delta = m // 2
    out = {}
    for u in itertools.product((0, delta), repeat=d):
        for e in range(m):
            pe = 1 - eta if e == 0 else eta / (m - 1)
            y = (theta + sum(u) + e) % m
            key = u + (y,)
            out[key] = out.get(key, 0.0) + 0.5**d * pe
    return out


class TestBuildTabular:
    def test_normalizes(self):
        d = build_tabular(2, 2, {(0, 0): 1, (1, 1): 1})
        assert np.allclose(d.probs, [0.5, 0.5])

    def test_single_sequence_is_point_mass(self):
        d = build_tabular(3, 2, [((1, 0, 1), 7.0)])
        assert d.prob((1, 0, 1)) == 1.0

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_tabular(2, 2, [((0, 0), 1), ((0, 0), 2)])

    @pytest.mark.parametrize(
        "support",
        [[((0, 0), 0.0)], [((0, 0), -1.0)], [((0, 0, 0), 1.0)], [((0, 2), 1.0)], []],
    )
    def test_invalid(self, support):
        with pytest.raises(ValueError):
            build_tabular(2, 2, support)

    def test_probs_read_only(self):
        d = two_point_uniform()
        with pytest.raises(ValueError):
            d.probs[0] = 1.0

    def test_enumerate_is_lexicographic(self):
        d = build_tabular(2, 2, {(1, 1): 1, (0, 1): 1, (1, 0): 2})
        seqs = [s for s, _ in d.enumerate()]
        assert seqs == sorted(seqs)
        assert math.isclose(sum(p for _, p in d.enumerate()), 1.0, abs_tol=1e-12)

    def test_two_point_rows(self):
        assert len(two_point_uniform().enumerate()) == 2
        assert dict(three_point_asymmetric().enumerate())[(0, 1, 1)] == pytest.approx(0.3)


class TestZm:
    @pytest.mark.parametrize("m,d,eta,theta", [(4, 1, 0.1, 0), (4, 1, 0.1, 2), (6, 2, 0.2, 3), (4, 3, 0.05, 0)])
    def test_matches_generative_law(self, m, d, eta, theta):
        dist = build_zm(ZmSpec(m=m, d=d, eta=eta, theta=theta))
        ref = zm_reference(m, d, eta, theta)
        assert set(dist.sequences) == set(ref)
        for x, p in dist.enumerate():
            assert p == pytest.approx(ref[x], abs=1e-15)

    def test_worked_values(self):
        assert build_zm(ZmSpec(4, 1, 0.1, 0)).prob((0, 0)) == pytest.approx(0.45)
        assert build_zm(ZmSpec(4, 1, 0.1, 2)).prob((0, 2)) == pytest.approx(0.45)

    def test_support_size_bound(self):
        dist = build_zm(ZmSpec(4, 2, 0.1))
        assert len(dist.enumerate()) <= 16
        assert sum(dist.probs) == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(1, 5), st.floats(0.01, 0.49))
    def test_latent_marginals_uniform(self, d, eta):
        dist = build_zm(ZmSpec(4, d, eta))
        for j in range(d):
            marg = dist.marginal(j)
            assert marg[0] == pytest.approx(0.5, abs=1e-12) and marg[2] == pytest.approx(0.5, abs=1e-12)

    def test_permutation_moves_y(self):
        spec = ZmSpec(4, 2, 0.1, permutation=(1, 2, 0))
        dist = build_zm(spec)
        assert spec.answer_index == 0 and dist.answer_index == 0
        ident = build_zm(ZmSpec(4, 2, 0.1))
        for (u1, u2, y), p in ident.enumerate():
            assert dist.prob((y, u1, u2)) == pytest.approx(p)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(m=5), dict(m=2), dict(d=0), dict(eta=0.5), dict(eta=0.0), dict(theta=1), dict(permutation=(0, 0, 1))],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            ZmSpec(**{"m": 4, "d": 2, "eta": 0.1, **kwargs})

    def test_family_keys(self):
        fam = zm_family(ZmSpec(4, 2, 0.1))
        assert sorted(fam) == [0, 2]
        assert fam[0].sequences == fam[2].sequences


class TestSampling:
    def test_point_mass(self, rng):
        d = point_mass((1, 0, 1), 2)
        assert all(sample(d, rng) == (1, 0, 1) for _ in range(50))

    def test_uniform_two_point(self, rng):
        n = 100_000
        idx = sample_indices(two_point_uniform(), rng, n)
        assert abs(idx.mean() - 0.5) < 3 * math.sqrt(0.25 / n)

    def test_zm_noise_rate(self, rng):
        dist = build_zm(ZmSpec(4, 1, 0.1))
        n = 50_000
        x = dist.array[sample_indices(dist, rng, n)]
        rate = np.mean(x[:, 0] != x[:, 1])
        assert abs(rate - 0.1) < 3 * math.sqrt(0.09 / n)

    def test_frequencies_match_enumeration(self, rng):
        dist = three_point_asymmetric()
        n = 60_000
        freq = np.bincount(sample_indices(dist, rng, n), minlength=3) / n
        assert np.all(np.abs(freq - dist.probs) < 4 * np.sqrt(dist.probs * (1 - dist.probs) / n))
