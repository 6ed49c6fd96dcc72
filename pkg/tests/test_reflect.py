import numpy as np
import pytest
from scipy import integrate

from rtci._rng import derive_key, normals
from rtci.domain import box, contains, from_halfspaces, half_line, wedge, whole_space
from rtci.reflect import (
    DiffusionMatrix,
    DriftField,
    DriftPerturbation,
    OneSidedBound,
    ReflectedDiffusion,
    gronwall_bound,
    one_sided_lipschitz_check,
    pathwise_gronwall_check,
    simulate_coupled_pair,
    simulate_reflected,
)
from rtci.validation import ConfigError, HypothesisError

A2 = np.array([[2.0, 0.5], [0.5, 1.0]])


def reference_scheme(domain, g, root, z0, n, dt, key, M, shift=None):
    """Plain projected Euler driven by the library's Gaussian stream."""
    xi = normals(key, 0, M, 0, n, domain.dim)
    x = np.repeat(np.asarray(z0, float)[None], M, axis=0)
    out = [x.copy()]
    for j in range(n):
        x = x + g(x) * dt + np.sqrt(dt) * xi[:, j] @ root
        if shift is not None:
            x = x + shift * dt
        for i in range(M):
            x[i] = _project_qp(domain, x[i])
        out.append(x.copy())
    return np.stack(out, axis=1)


def _project_qp(domain, x):
    from test_domain import qp_projection

    return qp_projection(domain.normals, domain.offsets, x) if domain.n_faces else x


# --- scheme --------------------------------------------------------------------


@pytest.mark.parametrize("engine", ["fused", "array"])
def test_scheme_matches_reference(engine):
    dom = box([0, 0], [1, 2])
    drift = DriftField.linear([[-1.0, 0.3], [0.0, -0.5]], [0.2, 0.1])
    A = DiffusionMatrix(A2)
    res = simulate_reflected(dom, drift, A, [0.5, 0.5], 0.1, 1e-3, 40, 3, engine=engine)
    ref = reference_scheme(dom, lambda x: drift(0, x), A.sqrt, [0.5, 0.5], 100, 1e-3, derive_key(3, 0), 40)
    np.testing.assert_allclose(res.path.values, ref, atol=1e-9)


def test_half_line_reflection_principle_with_scheme_bias():
    # |W_T| has mean sqrt(2T/pi); projected Euler started on the boundary
    # undershoots by 0.5826 sqrt(dt) (the expected overshoot of a Gaussian
    # random walk), which is about 3 standard errors at T = 1, M = 1e4
    T, dt, M = 1.0, 1e-3, 10_000
    z = simulate_reflected(half_line(), [0.0], 1.0, [0.0], T, dt, M, 17, record_every=1000).path.values[:, -1, 0]
    se = z.std(ddof=1) / np.sqrt(M)
    assert abs(z.mean() + 0.5826 * np.sqrt(dt) - np.sqrt(2 * T / np.pi)) < 3 * se
    # and the full |N(0, T)| law at a coarse level
    qs = np.quantile(z + 0.5826 * np.sqrt(dt), [0.25, 0.5, 0.75])
    np.testing.assert_allclose(qs, [0.3186, 0.6745, 1.1503], atol=0.04)


def test_boundary_bias_shrinks_with_dt():
    means = []
    for dt in (1e-2, 1e-3):
        n = round(1 / dt)
        z = simulate_reflected(half_line(), [0.0], 1.0, [0.0], 1.0, dt, 40_000, 5, record_every=n).path.values[:, -1, 0]
        means.append(z.mean())
    bias = np.sqrt(2 / np.pi) - np.array(means)
    assert bias[0] > bias[1] > 0
    assert bias[1] < 0.5 * bias[0]
    assert abs(bias[0] - 0.5826 * 0.1) < 0.015


def test_interior_paths_are_unreflected_bitwise():
    big = box([-100, -100], [100, 100])
    a = simulate_reflected(big, [0.1, -0.2], A2, [0, 0], 0.05, 1e-3, 200, 8)
    b = simulate_reflected(whole_space(2), [0.1, -0.2], A2, [0, 0], 0.05, 1e-3, 200, 8)
    assert np.array_equal(a.path.values, b.path.values)
    assert np.all(a.localtime == 0) and not np.any(a.normals)


@pytest.mark.parametrize(
    "domain, drift, A, z0",
    [
        (half_line(), DriftField.constant([-0.5]), [[1.0]], [0.0]),
        (box([0, 0], [1, 1]), DriftField.linear([[-1, 0.2], [0.2, -1]]), A2, [0.5, 0.5]),
        (wedge(3), DriftField.constant([1.0, 0.0, -1.0]), np.diag([1.0, 2.0, 1.0]), [0.0, 0.0, 0.0]),
        (whole_space(3), DriftField.rank_based([1.0, 0.0, 0.0]), np.eye(3), [0.0, 0.0, 0.0]),
        (from_halfspaces([[1, 1], [1, -2], [-1, 0]], [0, -1, -3]), DriftField.constant([0.0, -1.0]), np.eye(2), [1.0, 0.0]),
    ],
)
def test_engines_agree(domain, drift, A, z0):
    gamma = DriftPerturbation.constant(np.linspace(0.5, 1.0, domain.dim))
    kw = dict(T=0.2, dt=1e-3, M=64, seed=9)
    f = simulate_coupled_pair(domain, drift, A, z0, gamma, engine="fused", **kw)
    a = simulate_coupled_pair(domain, drift, A, z0, gamma, engine="array", **kw)
    for p, q in ((f.X, a.X), (f.Xp, a.Xp)):
        np.testing.assert_allclose(p.path.values, q.path.values, atol=1e-12)
        np.testing.assert_allclose(p.localtime, q.localtime, atol=1e-12)
        np.testing.assert_allclose(p.normals, q.normals, atol=1e-9)
    np.testing.assert_allclose(f.sup_sq, a.sup_sq, atol=1e-12)
    assert f.n_reflections == a.n_reflections
    np.testing.assert_allclose([f.sign_max, f.sign_min], [a.sign_max, a.sign_min], atol=1e-12)


def test_chunking_and_workers_are_invisible():
    dom = box([0, 0], [1, 1])
    g = DriftPerturbation.constant([1.0, 0.5])
    ref = simulate_coupled_pair(dom, [0, 0], A2, [0.5, 0.5], g, 0.1, 1e-3, 300, 4, chunk_size=300, workers=1)
    for chunk, workers in ((17, 1), (64, 4), (100, None)):
        out = simulate_coupled_pair(dom, [0, 0], A2, [0.5, 0.5], g, 0.1, 1e-3, 300, 4, chunk_size=chunk, workers=workers)
        assert np.array_equal(out.X.path.values, ref.X.path.values)
        assert np.array_equal(out.sup_sq, ref.sup_sq)


def test_path_offset_splits_a_sample():
    full = simulate_reflected(half_line(), [0.0], 1.0, [0.0], 0.1, 1e-2, 100, 1).path.values
    tail = simulate_reflected(half_line(), [0.0], 1.0, [0.0], 0.1, 1e-2, 40, 1, path_offset=60).path.values
    assert np.array_equal(full[60:], tail)


def test_invariants_of_reflected_paths():
    dom = wedge(3)
    res = simulate_reflected(dom, [1.0, 0.0, -1.0], np.eye(3), [0, 0, 0], 0.5, 1e-3, 200, 2)
    v = res.path.values
    assert np.all(np.diff(v, axis=2) >= -1e-12)
    assert np.all(res.localtime[:, 0] == 0)
    inc = np.diff(res.localtime, axis=1)
    assert np.all(inc >= 0)
    hit = np.any(res.normals != 0, axis=2)
    assert np.array_equal(hit, inc > 0)
    np.testing.assert_allclose(np.linalg.norm(res.normals[hit], axis=1), 1, atol=1e-12)


def test_custom_drift_and_adapted_perturbation_use_array_engine():
    drift = DriftField(lambda t, x: -x * (1 + t), OneSidedBound.constant(-1.0))
    gamma = DriftPerturbation.adapted(lambda t, x: np.ones_like(x), 1)
    with pytest.raises(ConfigError):
        simulate_reflected(half_line(), drift, 1.0, [1.0], 0.1, 1e-2, 10, 0, engine="fused")
    res = simulate_reflected(half_line(), drift, 1.0, [1.0], 0.1, 1e-2, 10, 0, perturbation=gamma)
    assert np.all(res.path.values >= 0)


def test_start_outside_domain_rejected():
    with pytest.raises(ConfigError):
        simulate_reflected(half_line(), [0.0], 1.0, [-1.0], 0.1, 1e-2, 10, 0)


# --- coupled pair -----------------------------------------------------------------


def test_zero_perturbation_gives_identical_copies():
    res = simulate_coupled_pair(box([0, 0], [1, 1]), [0, 0], A2, [0.5, 0.5], DriftPerturbation.zero(2), 1.0, 1e-3, 100, 3)
    assert np.array_equal(res.X.path.values, res.Xp.path.values)
    assert np.all(res.sup_sq == 0)


def test_one_dimensional_coupling_is_monotone():
    res = simulate_coupled_pair(half_line(), [0.0], 1.0, [0.0], DriftPerturbation.constant([0.7]), 1.0, 1e-3, 10_000, 6, record_every=100)
    X, Xp = res.X.path.values[..., 0], res.Xp.path.values[..., 0]
    assert np.all(X >= Xp)
    grid = np.linspace(0, 3, 31)
    for j in range(1, X.shape[1]):
        assert np.all(np.mean(X[:, j, None] <= grid, 0) <= np.mean(Xp[:, j, None] <= grid, 0))


def test_coupling_is_reproducible():
    args = (box([0, 0], [1, 1]), [0, 0], A2, [0.5, 0.5], DriftPerturbation.constant([1.0, 0.0]), 0.5, 1e-3, 200, 3)
    assert np.array_equal(simulate_coupled_pair(*args).sup_sq, simulate_coupled_pair(*args).sup_sq)
    assert np.all(np.isfinite(simulate_coupled_pair(*args).sup_sq))


@pytest.mark.parametrize("domain, z0", [(wedge(3), [0, 0, 0]), (box([0, 0, 0], [1, 1, 1]), [0.2, 0.5, 0.9])])
def test_reflection_sign(domain, z0):
    gamma = DriftPerturbation.constant([1.0, -0.5, 0.3])
    res = simulate_coupled_pair(domain, [0.3, 0, -0.3], np.diag([1.0, 2.0, 1.0]), z0, gamma, 1.0, 1e-3, 2000, 8)
    assert res.n_reflections > 0
    assert res.sign_max <= 1e-9 and res.sign_min >= -1e-9
    # recompute from the recorded normals
    diff = res.X.path.values[:, 1:] - res.Xp.path.values[:, 1:]
    assert np.max(np.sum(res.X.normals * diff, axis=2)) <= 1e-9
    assert np.min(np.sum(res.Xp.normals * diff, axis=2)) >= -1e-9


def test_flat_drift_coupling_bound():
    # F = 0: E sup|X - X'|^2 <= |A| T int |gamma|^2
    A = DiffusionMatrix(A2)
    gamma = DriftPerturbation.linear_in_time([1.0, -1.0])
    res = simulate_coupled_pair(box([0, 0], [1, 1]), [0, 0], A, [0.5, 0.5], gamma, 1.0, 1e-3, 2000, 12)
    lhs = res.sup_sq.mean() + 3 * res.sup_sq.std() / np.sqrt(2000)
    assert lhs <= A.opnorm * 1.0 * gamma.square_integral(1.0)


# --- drift checks and Gronwall -------------------------------------------------------


def test_one_sided_lipschitz_examples():
    assert one_sided_lipschitz_check(DriftField.constant([1.0, 2.0]), box([0, 0], [1, 1]), 500, 0).max_violation == 0
    r = one_sided_lipschitz_check(DriftField.linear(-np.eye(2)), whole_space(2), 500, 0)
    assert abs(r.max_violation) < 1e-12
    bad = DriftField(lambda t, x: x, OneSidedBound.constant(0.0))
    assert one_sided_lipschitz_check(bad, whole_space(2), 500, 0).max_violation > 0
    with pytest.raises(HypothesisError):
        one_sided_lipschitz_check(DriftField(lambda t, x: x), whole_space(1), 10, 0)


def test_linear_drift_bound_is_top_eigenvalue(rng):
    K = rng.standard_normal((3, 3))
    d = DriftField.linear(K)
    assert d.one_sided_bound.value == pytest.approx(np.linalg.eigvalsh(K + K.T).max() / 2)
    assert one_sided_lipschitz_check(d, whole_space(3), 2000, 1).max_violation <= 1e-9


def test_rank_drift_bound_requires_nonincreasing():
    assert DriftField.rank_based([1.0, 0.0]).one_sided_bound.value == 0.0
    assert DriftField.rank_based([0.0, 1.0]).one_sided_bound is None


def test_diffusion_matrix_invariants(rng):
    B = rng.standard_normal((4, 4))
    D = DiffusionMatrix(B @ B.T + 0.1 * np.eye(4))
    np.testing.assert_allclose(D.sqrt @ D.sqrt, D.A, atol=1e-10)
    assert D.opnorm == pytest.approx(np.linalg.eigvalsh(D.A).max(), abs=1e-10)
    with pytest.raises(ConfigError):
        DiffusionMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_gronwall_bound_closed_forms():
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(gronwall_bound(DriftPerturbation.constant([1.0]), 0.0, t), t, atol=1e-15)
    np.testing.assert_allclose(gronwall_bound(DriftPerturbation.constant([1.0]), -1.0, t), 1 - np.exp(-t), atol=1e-15)
    assert np.all(gronwall_bound(DriftPerturbation.zero(2), 1.0, t) == 0)


def test_gronwall_bound_against_quadrature():
    gamma = DriftPerturbation(lambda t: np.array([np.sin(3 * t), t]), 2)
    F = OneSidedBound.piecewise([0.0, 0.4], [0.5, -1.0])
    A = DiffusionMatrix(A2)
    t = np.linspace(0, 1, 21)
    got = gronwall_bound(gamma, F, t, A)
    for k in (5, 13, 20):
        s_int = lambda s, tk=t[k]: np.linalg.norm(A.sqrt @ gamma.at(s)) * np.exp(F.integral(s, tk))  # noqa: E731
        want = integrate.quad(s_int, 0, t[k], points=[0.4], epsabs=1e-13)[0]
        assert got[k] == pytest.approx(want, rel=1e-10)


def test_pathwise_gronwall_examples():
    zero = simulate_coupled_pair(half_line(), [0.0], 1.0, [0.0], DriftPerturbation.zero(1), 1.0, 1e-3, 100, 1)
    rep = pathwise_gronwall_check(zero.X, zero.Xp, DriftPerturbation.zero(1), 0.0)
    assert rep.fraction_violating == 0 and rep.max_excess == 0
    fractions = []
    for dt in (1e-3, 1e-4):
        g = DriftPerturbation.constant([1.0])
        res = simulate_coupled_pair(half_line(), [0.0], 1.0, [0.0], g, 1.0, dt, 500, 2)
        rep = pathwise_gronwall_check(res.X, res.Xp, g, 0.0)
        assert rep.fraction_violating < 0.01
        assert rep.max_excess < 1e-9
        fractions.append(rep.fraction_violating)
    assert fractions[1] <= fractions[0]
    with pytest.raises(ConfigError):
        pathwise_gronwall_check(res.X, res.Xp, DriftPerturbation.adapted(lambda t, x: x, 1), 0.0)


def test_gronwall_with_contracting_drift():
    g = DriftPerturbation.constant([1.0])
    drift = DriftField.linear([[-1.0]])
    res = simulate_coupled_pair(half_line(), drift, 1.0, [0.5], g, 1.0, 1e-3, 500, 3)
    rep = pathwise_gronwall_check(res.X, res.Xp, g, -1.0)
    # the scheme obeys Y_{j+1} <= (1 - dt) Y_j + dt, so Y_j <= 1 - (1 - dt)^j,
    # which exceeds the continuous bound 1 - exp(-t_j) by O(dt)
    j = np.arange(1001)
    assert rep.fraction_violating == 0
    assert rep.max_excess <= np.max(np.exp(-j * 1e-3) - (1 - 1e-3) ** j) + 1e-12


def test_perturbation_square_integral():
    assert DriftPerturbation.constant([1.0, 0.0]).square_integral(2.0) == 2.0
    assert DriftPerturbation.linear_in_time([3.0]).square_integral(1.0) == pytest.approx(3.0, rel=1e-12)


def test_estimator_wrapper():
    est = ReflectedDiffusion(domain=half_line(), dt=0.01)
    res = est.sample([0.0], 0.1, 20, 0)
    assert res.path.values.shape == (20, 11, 1)
    pair = est.sample_coupled([0.0], DriftPerturbation.constant([1.0]), 0.1, 20, 0)
    assert np.all(pair.X.path.values >= pair.Xp.path.values)
    assert contains(half_line(), est.project([[-1.0]])[0])


def _projected_euler(domain, z0, increments, dt, g):
    x = np.repeat(np.asarray(z0, float)[None], increments.shape[0], axis=0)
    out = [x.copy()]
    for j in range(increments.shape[1]):
        x = x + g * dt + increments[:, j]
        domain.project_rows(x)
        out.append(x.copy())
    return np.stack(out, axis=1)


def test_discretization_converges_under_refinement():
    # strong error between grids dt and dt/2 driven by the same Brownian path
    rng = np.random.default_rng(3)
    dom, g, T, M = wedge(2), np.array([1.0, 0.0]), 1.0, 2000
    fine_n = 2**10
    dW = rng.standard_normal((M, fine_n, 2)) * np.sqrt(T / fine_n)
    errs = []
    for level in (4, 5, 6):
        n = 2**level
        coarse = dW.reshape(M, n, -1, 2).sum(axis=2)
        half = dW.reshape(M, 2 * n, -1, 2).sum(axis=2)
        a = _projected_euler(dom, [0, 0], coarse, T / n, g)
        b = _projected_euler(dom, [0, 0], half, T / (2 * n), g)[:, ::2]
        errs.append(np.mean(np.max(np.sum((a - b) ** 2, axis=2), axis=1)))
    assert errs[0] > errs[1] > errs[2]
