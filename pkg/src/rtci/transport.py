"""Optimal transport between empirical path measures, and Girsanov entropy.

Paths are compared in the sup norm over the simulation grid,
``|x - y| = max_j |x(t_j) - y(t_j)|``. Two solvers are provided: an exact
linear-programming solver with a complementary-slackness certificate, and a
log-domain Sinkhorn solver for larger supports whose plan is rounded to an
exactly feasible coupling (so its cost is an upper bound on the optimum).
"""

import csv
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ._parallel import map_chunks
from .bundle import PathBundle, read_bundle
from .validation import ConfigError, NumericalError, check_count, check_positive

EXACT_CAP = 512
CERTIFICATE_TOL = 1e-9
#: epsilon ladder as multiples of the median cost
DEFAULT_LADDER = (1.0, 0.3, 0.1, 0.03, 0.01)


def _as_paths(x, name):
    if isinstance(x, PathBundle):
        return x.values
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ConfigError(f"{name} must be a path array of shape (paths, times, dim), got {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted collection of paths sampled on a common grid.

    ``source`` optionally records the bundle file and row indices the
    support was taken from.
    """

    support: np.ndarray
    weights: np.ndarray = None
    dt: float = None
    source: tuple = None

    def __post_init__(self):
        s = _as_paths(self.support, "support")
        m = s.shape[0]
        w = np.full(m, 1.0 / m) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (m,):
            raise ConfigError(f"weights must have shape ({m},), got {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_bundle(cls, bundle, rows=None, weights=None):
        rows = np.arange(bundle.n_paths) if rows is None else np.asarray(rows, dtype=int)
        return cls(bundle.values[rows], weights, bundle.dt)

    @classmethod
    def from_file(cls, path, rows=None, weights=None):
        """Measure on rows of a bundle file; the reference is kept in ``source``."""
        bundle, _ = read_bundle(path)
        rows = np.arange(bundle.n_paths) if rows is None else np.asarray(rows, dtype=int)
        return cls(bundle.values[rows], weights, bundle.dt, (str(path), rows.tolist()))

    @property
    def size(self):
        return self.support.shape[0]


@dataclass(frozen=True, eq=False)
class CouplingPlan:
    """Transport plan together with its cost ``sum(plan * cost_matrix)``."""

    plan: np.ndarray
    cost: float

    def marginal_residual(self, a, b):
        return max(np.abs(self.plan.sum(axis=1) - a).max(), np.abs(self.plan.sum(axis=0) - b).max())


def _check_grid(x, y):
    if x.shape[1:] != y.shape[1:]:
        raise ConfigError(f"paths live on different grids: {x.shape[1:]} vs {y.shape[1:]}")


def path_sup_distance(x, y):
    """``max_j |x(t_j) - y(t_j)|`` for two paths of shape ``(times, dim)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape != y.shape:
        raise ConfigError(f"paths live on different grids: {x.shape} vs {y.shape}")
    return float(np.sqrt(np.max(np.sum((x - y) ** 2, axis=1))))


@nb.njit(cache=True, nogil=True)
def _sup_sq_block(x, y, out):
    for i in range(out.shape[0]):
        for j in range(y.shape[0]):
            best = 0.0
            for t in range(x.shape[1]):
                acc = 0.0
                for k in range(x.shape[2]):
                    e = x[i, t, k] - y[j, t, k]
                    acc += e * e
                if acc > best:
                    best = acc
            out[i, j] = best


def cost_matrix(mu, nu, p=2.0, workers=None):
    """``C[i, j] = |x_i - y_j|^p`` in the sup-norm path metric."""
    x = mu.support if isinstance(mu, EmpiricalMeasure) else _as_paths(mu, "mu")
    y = nu.support if isinstance(nu, EmpiricalMeasure) else _as_paths(nu, "nu")
    _check_grid(x, y)
    y = np.ascontiguousarray(y)

    def block(s, c):
        out = np.empty((c, y.shape[0]))
        _sup_sq_block(np.ascontiguousarray(x[s : s + c]), y, out)
        return out

    sq = np.concatenate(map_chunks(block, x.shape[0], 64, workers))
    return sq if p == 2 else sq ** (0.5 * p)


def _check_p(p):
    p = check_positive(p, "p")
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    return p


@dataclass(frozen=True, eq=False)
class ExactResult:
    value: float
    coupling: CouplingPlan
    certificate: float
    row_potential: np.ndarray
    col_potential: np.ndarray


def solve_transport_lp(C, a, b):
    """Exact discrete OT for cost ``C`` and marginals ``a``, ``b``.

    Uses the HiGHS dual simplex on the transportation polytope. Returns the
    plan, dual potentials ``(u, v)`` and the certificate: the largest of the
    marginal residuals, the dual infeasibility ``max(u_i + v_j - C_ij)`` and
    the complementary-slackness residual ``max plan_ij |C_ij - u_i - v_j|``.
    """
    m, k = C.shape
    rows = sparse.kron(sparse.eye(m), np.ones((1, k)))
    cols = sparse.kron(np.ones((1, m)), sparse.eye(k))
    A = sparse.vstack([rows, cols]).tocsr()
    res = linprog(
        C.ravel(),
        A_eq=A,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options=dict(primal_feasibility_tolerance=1e-10, dual_feasibility_tolerance=1e-10),
    )
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(m, k), 0.0)
    duals = res.eqlin.marginals
    u, v = duals[:m], duals[m:]
    reduced = C - u[:, None] - v[None, :]
    cert = max(
        np.abs(plan.sum(axis=1) - a).max(),
        np.abs(plan.sum(axis=0) - b).max(),
        max(0.0, -reduced.min()),
        float(np.max(plan * np.abs(reduced))),
    )
    return plan, u, v, cert


def wasserstein_exact(mu, nu, p=2.0, cap=EXACT_CAP, C=None):
    """Exact empirical ``W_p`` under the sup-norm path metric.

    Raises ConfigError above ``cap`` support points (use
    :func:`wasserstein_entropic` there) and NumericalError if the optimality
    certificate exceeds 1e-9 relative to the largest cost.
    """
    p = _check_p(p)
    if max(mu.size, nu.size) > cap:
        raise ConfigError(f"support size {max(mu.size, nu.size)} exceeds the exact-solver cap {cap}; use the entropic solver")
    C = cost_matrix(mu, nu, p) if C is None else C
    plan, u, v, cert = solve_transport_lp(C, mu.weights, nu.weights)
    scale = max(1.0, float(C.max()))
    if cert > CERTIFICATE_TOL * scale:
        raise NumericalError(f"optimality certificate {cert:.3e} exceeds tolerance")
    cost = float(np.sum(plan * C))
    return ExactResult(max(cost, 0.0) ** (1.0 / p), CouplingPlan(plan, cost), cert, u, v)


# ---------------------------------------------------------------------------
# entropic solver


@nb.njit(cache=True, nogil=True)
def _softmin_rows(C, pot, logw, eps, out):
    # out_i = -eps * log sum_j w_j exp((pot_j - C_ij) / eps)
    m, k = C.shape
    for i in range(m):
        top = -np.inf
        for j in range(k):
            v = logw[j] + (pot[j] - C[i, j]) / eps
            if v > top:
                top = v
        acc = 0.0
        for j in range(k):
            acc += np.exp(logw[j] + (pot[j] - C[i, j]) / eps - top)
        out[i] = -eps * (top + np.log(acc))


@nb.njit(cache=True, nogil=True)
def _marginal_error(CT, f, g, loga, eps, b):
    # L1 error of the column marginals of diag(a e^{f/eps}) K diag(b e^{g/eps})
    k = CT.shape[0]
    err = 0.0
    for j in range(k):
        acc = 0.0
        for i in range(CT.shape[1]):
            acc += np.exp(loga[i] + (f[i] + g[j] - CT[j, i]) / eps)
        err += abs(acc * b[j] - b[j])
    return err


@nb.njit(cache=True, nogil=True)
def _sinkhorn(C, CT, a, b, eps, f, g, max_iter, tol, check_every):
    loga = np.log(a)
    logb = np.log(b)
    err = np.inf
    for it in range(1, max_iter + 1):
        _softmin_rows(C, g, logb, eps, f)
        _softmin_rows(CT, f, loga, eps, g)
        # after the g-update the columns are exact; measure the rows instead
        if it % check_every == 0:
            err = _marginal_error(C, g, f, logb, eps, a)
            if err <= tol:
                return it, err
    return max_iter + 1, err


def round_to_feasible(P, a, b):
    """Nearby coupling with marginals exactly ``a`` and ``b``.

    Rows and columns are first scaled down to fit their targets, then the
    missing mass is added as a rank-one correction.
    """
    P = P * np.minimum(1.0, a / np.maximum(P.sum(axis=1), 1e-300))[:, None]
    P = P * np.minimum(1.0, b / np.maximum(P.sum(axis=0), 1e-300))[None, :]
    er = a - P.sum(axis=1)
    ec = b - P.sum(axis=0)
    mass = er.sum()
    if mass > 0:
        P = P + np.outer(er, ec) / mass
    return P


@dataclass(frozen=True, eq=False)
class EntropicResult:
    """Outcome of one Sinkhorn solve.

    ``value`` is ``cost ** (1/p)`` of the rounded, exactly feasible plan.
    ``dual_gap`` is that cost minus a feasible dual objective built from the
    Sinkhorn potentials, so the optimum lies in ``[cost - dual_gap, cost]``.
    """

    value: float
    coupling: CouplingPlan
    dual_gap: float
    epsilon: float
    iterations: int
    marginal_error: float
    potentials: tuple = field(repr=False, default=None)


def _entropic_solve(C, CT, a, b, eps, f, g, max_iter, tol, p):
    it, err = _sinkhorn(C, CT, a, b, eps, f, g, max_iter, tol, 10)
    if it > max_iter:
        raise NumericalError(f"Sinkhorn did not converge within {max_iter} iterations at epsilon={eps:.3g} (error {err:.2e})")
    P = np.exp((f[:, None] + g[None, :] - C) / eps) * a[:, None] * b[None, :]
    P = round_to_feasible(P, a, b)
    cost = float(np.sum(P * C))
    # c-transforms give a dual-feasible pair
    u = np.min(C - g[None, :], axis=1)
    v = np.min(C - u[:, None], axis=0)
    dual = float(a @ u + b @ v)
    return EntropicResult(
        value=max(cost, 0.0) ** (1.0 / p),
        coupling=CouplingPlan(P, cost),
        dual_gap=max(cost - dual, 0.0),
        epsilon=eps,
        iterations=it,
        marginal_error=err,
        potentials=(f.copy(), g.copy()),
    )


def wasserstein_entropic(mu, nu, p=2.0, epsilon=None, max_iter=100_000, tol=1e-6, C=None, warm_start=None):
    """Entropic ``W_p`` estimate at a single ``epsilon`` (absolute units of cost).

    ``epsilon=None`` uses 1% of the median cost. Returns an EntropicResult.
    Raises NumericalError when the marginal error stays above ``tol``
    after ``max_iter`` iterations.
    """
    p = _check_p(p)
    max_iter = check_count(max_iter, "max_iter")
    C = cost_matrix(mu, nu, p) if C is None else np.asarray(C, dtype=float)
    eps = 0.01 * _cost_scale(C) if epsilon is None else check_positive(epsilon, "epsilon")
    a, b = mu.weights, nu.weights
    f, g = (np.zeros(C.shape[0]), np.zeros(C.shape[1])) if warm_start is None else map(np.array, warm_start)
    return _entropic_solve(C, np.ascontiguousarray(C.T), a, b, eps, f, g, max_iter, tol, p)


def _cost_scale(C):
    med = float(np.median(C))
    return med if med > 0 else max(float(C.max()), 1e-300)


def entropic_ladder(mu, nu, p=2.0, ladder=DEFAULT_LADDER, max_iter=100_000, tol=1e-6, C=None):
    """Solve along decreasing ``epsilon = factor * median(cost)``, warm-starting each rung.

    Returns one EntropicResult per rung; the last one is the estimate.
    """
    p = _check_p(p)
    C = cost_matrix(mu, nu, p) if C is None else np.asarray(C, dtype=float)
    CT = np.ascontiguousarray(C.T)
    scale = _cost_scale(C)
    f, g = np.zeros(C.shape[0]), np.zeros(C.shape[1])
    out = []
    for factor in ladder:
        res = _entropic_solve(C, CT, mu.weights, nu.weights, factor * scale, f, g, max_iter, tol, p)
        f, g = res.potentials
        f, g = f.copy(), g.copy()
        out.append(res)
    return out


def export_matrix_csv(path, matrix, row_label="i", col_label="j"):
    """Write a cost matrix or plan as ``i,j,value`` rows."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([row_label, col_label, "value"])
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                w.writerow([i, j, repr(float(matrix[i, j]))])


# ---------------------------------------------------------------------------
# relative entropy


def relative_entropy_drift(gamma, T, A=None, mode="deterministic", samples=None, return_stderr=False):
    """Relative entropy of the law perturbed by ``gamma`` w.r.t. the unperturbed one.

    ``H = 1/2 E_Q int_0^T |gamma_t|^2 dt``. Deterministic mode integrates
    ``gamma(t)`` by quadrature. Adapted mode averages a left-point sum of
    ``|gamma(t, X_t)|^2`` over ``samples`` (a PathBundle drawn under the
    perturbed law); with ``return_stderr`` it also returns the standard error.

    ``A`` is accepted for interface symmetry: the entropy depends on
    ``gamma`` only, even though paths move by ``sqrt(A) gamma``.
    """
    T = check_positive(T, "T")
    if A is not None and np.atleast_2d(A).shape[0] != gamma.dim:
        raise ConfigError(f"A has dimension {np.atleast_2d(A).shape[0]}, gamma has {gamma.dim}")
    if mode == "deterministic":
        if not gamma.deterministic:
            raise ConfigError("adapted perturbation needs mode='adapted' and samples")
        H = 0.5 * gamma.square_integral(T)
        return (H, 0.0) if return_stderr else H
    if mode != "adapted":
        raise ConfigError(f"mode must be 'deterministic' or 'adapted', got {mode!r}")
    if samples is None:
        raise ConfigError("adapted mode needs samples from the perturbed law")
    if abs(samples.T - T) > 1e-9 * T:
        raise ConfigError(f"samples cover [0, {samples.T}], expected [0, {T}]")
    x = samples.values
    acc = np.zeros(samples.n_paths)
    for j in range(samples.n_steps):
        t = j * samples.dt
        gam = gamma.func(t, x[:, j]) if not gamma.deterministic else np.broadcast_to(gamma.at(t), x[:, j].shape)
        acc += np.einsum("ij,ij->i", gam, gam) * samples.dt
    per_path = 0.5 * acc
    H = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(len(per_path))) if len(per_path) > 1 else np.inf
    return (H, se) if return_stderr else H
