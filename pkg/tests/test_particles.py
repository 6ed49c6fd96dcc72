import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from rtci.bundle import PathBundle
from rtci.particles import (
    CompetingParticles,
    ConstantPositions,
    LinearSpacing,
    RankCoefficients,
    check_initial_rule,
    rank_drift,
    ranked_from_named,
    ranking_permutation,
    rearrangement_gap,
    simulate_named,
    simulate_truncated_infinite,
    truncation_diagnostic,
    validate_coefficients,
)
from rtci.validation import ConfigError, HypothesisError


def test_ranking_permutation_examples():
    # zero-based: forward[rank] = name
    assert ranking_permutation([3, 1, 2]).forward.tolist() == [1, 2, 0]
    assert ranking_permutation([1, 1]).forward.tolist() == [0, 1]
    p = ranking_permutation([5, 5, 0])
    assert p.forward.tolist() == [2, 0, 1]
    assert np.array_equal(p.forward[p.inverse], np.arange(3))


def test_rank_drift_rows():
    g = np.array([10.0, 20.0, 30.0])
    x = np.array([[3.0, 1.0, 2.0], [0.0, 0.0, -1.0]])
    assert rank_drift(g, x).tolist() == [[30, 10, 20], [20, 30, 10]]


def test_validate_coefficients_examples():
    r = validate_coefficients(RankCoefficients([0, -1, -2], [1, 1, 1]))
    assert r.strong_uniqueness and r.nonincreasing_drifts
    assert validate_coefficients(RankCoefficients([0, 0, 0], np.sqrt([1, 3, 1]))).strong_uniqueness
    assert not validate_coefficients(RankCoefficients([0, 0, 0], np.sqrt([3, 1, 3]))).strong_uniqueness
    r = validate_coefficients(RankCoefficients.atlas(4))
    assert r.strong_uniqueness and r.nonincreasing_drifts
    assert not validate_coefficients(RankCoefficients([0, 1], [1, 1])).nonincreasing_drifts


def test_coefficients_reject_bad_sigma_and_short_lists():
    with pytest.raises(ConfigError):
        RankCoefficients([0, 0], [1, 0])
    with pytest.raises(ConfigError):
        RankCoefficients([0, 0], [1, 1]).drifts(3)
    assert RankCoefficients([1, 0], [1, 2], tail=True).sigmas(4).tolist() == [1, 2, 2, 2]


# --- rearrangement -------------------------------------------------------------


def test_rearrangement_examples():
    g = np.array([1.0, 0.0])
    assert rearrangement_gap(g, [0.3, 2.0], [0.3, 2.0]) == 0
    assert rearrangement_gap(g, [0, 1], [1, 0]) == -2.0


def brute_force_gap(g, x, y):
    # g(x)_i = g_k where k is the position of i in the sort of x
    gx = np.empty_like(x)
    gy = np.empty_like(y)
    for k, i in enumerate(sorted(range(len(x)), key=lambda i: (x[i], i))):
        gx[i] = g[k]
    for k, i in enumerate(sorted(range(len(y)), key=lambda i: (y[i], i))):
        gy[i] = g[k]
    return (gx - gy) @ (x - y)


def test_rearrangement_matches_brute_force(rng):
    for _ in range(2000):
        N = int(rng.integers(1, 7))
        g = rng.standard_normal(N)
        x, y = rng.standard_normal(N), rng.standard_normal(N)
        assert rearrangement_gap(g, x, y) == pytest.approx(brute_force_gap(g, x, y), abs=1e-12)


@given(
    st.integers(2, 6).flatmap(
        lambda n: st.tuples(
            arrays(float, n, elements=st.floats(-5, 5)),
            arrays(float, n, elements=st.floats(-100, 100)),
            arrays(float, n, elements=st.floats(-100, 100)),
        )
    )
)
def test_rearrangement_nonpositive_for_nonincreasing_drifts(args):
    g, x, y = args
    g = np.sort(g)[::-1]
    assert rearrangement_gap(g, x, y) <= 1e-12 * (1 + np.abs(g).max() * np.abs(x - y).sum())


def test_rearrangement_inequality_over_permutations(rng):
    # sum a_i b_{pi(i)} is largest for similarly ordered sequences
    for _ in range(200):
        a = np.sort(rng.standard_normal(5))
        b = np.sort(rng.standard_normal(5))
        best = max(a @ b[list(p)] for p in itertools.permutations(range(5)))
        assert best == pytest.approx(a @ b, abs=1e-12)


# --- simulation ----------------------------------------------------------------


def test_single_particle_is_drifted_brownian_motion():
    b = simulate_named(RankCoefficients([0.7], [1.3]), 1, [2.0], 1.0, 1e-2, 10_000, 3)
    x = b.values[:, -1, 0]
    assert abs(x.mean() - 2.7) < 3 * x.std() / 100
    assert abs(x.var() - 1.69) < 0.05 * 1.69


def test_equal_coefficients_give_independent_brownian_motions():
    b = simulate_named(RankCoefficients([0, 0], [1, 1]), 2, [0, 0], 1.0, 1e-2, 10_000, 4)
    x = b.values[:, -1]
    assert abs(x[:, 0].var() - 1) < 0.05
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.04


def _max_tail(m, mu, s, T):
    # P(sup_{t<=T} (mu t + s W_t) >= m)
    z = s * np.sqrt(T)
    return stats.norm.sf((m - mu * T) / z) + np.exp(2 * mu * m / s**2) * stats.norm.cdf((-m - mu * T) / z)


def test_atlas_gap_matches_reflected_drifted_motion():
    # Y2 - Y1 for the 2-particle Atlas model is Brownian motion with drift -1
    # and variance 2 reflected at 0; from 0 its time-T law is that of the
    # running maximum of the free motion
    T = 1.0
    oracle = integrate.quad(lambda m: _max_tail(m, -1.0, np.sqrt(2), T), 0, np.inf)[0]
    b = simulate_named(RankCoefficients.atlas(2), 2, [0, 0], T, 1e-3, 40_000, 7, record_every=1000)
    z = np.abs(np.diff(b.values[:, -1], axis=1)).ravel()
    assert abs(z.mean() - oracle) < 4 * z.std() / np.sqrt(z.size)


def test_named_engines_agree():
    c = RankCoefficients([1.0, 0.0, -0.5, -0.5], [1.0, 1.2, 0.9, 1.0])
    a = simulate_named(c, 4, [0, 0.1, 0.2, 0.3], 0.5, 1e-2, 300, 11, engine="fused").values
    b = simulate_named(c, 4, [0, 0.1, 0.2, 0.3], 0.5, 1e-2, 300, 11, engine="array").values
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_named_chunking_and_workers_do_not_change_output():
    c = RankCoefficients.atlas(3)
    ref = simulate_named(c, 3, [0, 1, 2], 0.2, 1e-2, 500, 5, chunk_size=500, workers=1).values
    for chunk, workers in ((7, 1), (64, 4), (128, None)):
        out = simulate_named(c, 3, [0, 1, 2], 0.2, 1e-2, 500, 5, chunk_size=chunk, workers=workers).values
        assert np.array_equal(out, ref)


def test_ranked_from_named_examples():
    const = PathBundle(np.tile([2.0, 1.0], (1, 5, 1)), 0.1)
    r = ranked_from_named(const)
    assert np.array_equal(r.ranked.values[0, 0], [1, 2])
    assert np.all(r.gaps.values == 1) and np.all(r.localtime == 0)
    t = np.linspace(0, 1, 11)
    crossing = PathBundle(np.stack([t, 1 - t], axis=1)[None], 0.1)
    y = ranked_from_named(crossing).ranked.values[0]
    assert np.all(np.abs(np.diff(y, axis=0)) <= 0.1 + 1e-12)


def test_ranked_bundle_invariants():
    b = simulate_named(RankCoefficients.atlas(3), 3, [0, 0, 0], 1.0, 1e-2, 2000, 9)
    r = ranked_from_named(b)
    assert np.all(r.gaps.values >= 0)
    assert np.all(np.diff(r.ranked.values, axis=2) >= 0)
    assert np.all(r.localtime[:, 0] == 0) and np.all(np.diff(r.localtime, axis=1) >= 0)
    assert r.localtime[:, -1].mean() > 0


def test_initial_rules():
    check_initial_rule(LinearSpacing(1.0))
    with pytest.raises(HypothesisError, match="infinity"):
        check_initial_rule(ConstantPositions(0.0))


def test_truncated_infinite_requires_tail_and_valid_k():
    with pytest.raises(ConfigError):
        simulate_truncated_infinite(RankCoefficients.atlas(3), 1, 3, LinearSpacing(), 1.0, 0.1, 10, 0)
    with pytest.raises(ConfigError):
        simulate_truncated_infinite(RankCoefficients.atlas(), 5, 4, LinearSpacing(), 1.0, 0.1, 10, 0)
    with pytest.raises(HypothesisError):
        simulate_truncated_infinite(RankCoefficients.atlas(), 1, 4, ConstantPositions(), 1.0, 0.1, 10, 0)


def test_truncation_doubling_is_within_noise():
    diag = truncation_diagnostic(RankCoefficients.atlas(), 1, 16, LinearSpacing(1.0), 1.0, 1e-2, 10_000, 21)
    assert diag.consistent, diag


def test_competing_particles_estimator():
    est = CompetingParticles(g=[1.0, 0.0], sigma=[1.0, 1.0], dt=0.01)
    assert est.get_params()["dt"] == 0.01
    paths = est.sample_ranked([0.0, 0.5], 0.1, 50, 0)
    assert paths.ranked.values.shape == (50, 11, 2)
