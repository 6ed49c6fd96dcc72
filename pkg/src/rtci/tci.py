"""Transportation-cost constants and the inequality verification harness.

For a reflected diffusion with diffusion matrix ``A`` whose drift satisfies
``(g(t,x) - g(t,y)) . (x - y) <= F(t) |x - y|^2``, the path law satisfies
``W_2(P, Q) <= sqrt(2 C H(Q|P))`` with

    C = |A| sup_{0<=t<=T} int_0^t exp(2 int_s^t F(u) du) ds.

The harness checks the coupling form of that statement directly: driving
``X ~ Q`` and ``X' ~ P`` with the same noise gives a coupling with
``E |X - X'|^2 <= 2 C H``. An optimal-transport estimate between independent
samples is reported alongside as a diagnostic.
"""

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize
from sklearn.base import BaseEstimator
from statsmodels.stats.proportion import proportion_confint

from .domain import whole_space, wedge
from .particles import RankCoefficients, check_initial_rule, validate_coefficients
from .reflect import (
    DiffusionMatrix,
    DriftField,
    DriftPerturbation,
    OneSidedBound,
    as_bound,
    gronwall_bound,
    gronwall_slack_constant,
    simulate_coupled_pair,
    simulate_reflected,
)
from .transport import (
    DEFAULT_LADDER,
    EXACT_CAP,
    EmpiricalMeasure,
    cost_matrix,
    entropic_ladder,
    relative_entropy_drift,
    wasserstein_exact,
)
from .validation import ConfigError, HypothesisError, NumericalError, check_count, check_grid, check_positive

REPORT_SCHEMA = "rtci.tci-report"
REPORT_VERSION = 1
CSV_COLUMNS = ("scenario", "gamma_id", "C", "H", "lhs", "rhs", "margin", "verdict")

_QUAD = dict(epsabs=1e-15, epsrel=1e-13, limit=500)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class TciConstantSpec:
    """Inputs of the constant: operator norm of ``A``, bound ``F``, horizon ``T``."""

    normA: float
    F: OneSidedBound
    T: float

    def __post_init__(self):
        object.__setattr__(self, "normA", check_positive(self.normA, "normA"))
        object.__setattr__(self, "T", check_positive(self.T, "T"))
        object.__setattr__(self, "F", as_bound(self.F))
        if not np.isfinite(self.F.abs_integral(0.0, self.T)):
            raise ConfigError("F is not integrable on [0, T]")


def _closed_form(gamma, T):
    # int_0^T exp(2 gamma (T - s)) ds
    return T if gamma == 0 else np.expm1(2.0 * gamma * T) / (2.0 * gamma)


def _inner_integral(F, t):
    """``int_0^t exp(2 int_s^t F) ds`` by adaptive quadrature."""
    if t <= 0:
        return 0.0
    phi_t = F.integral(0.0, t)
    points = F.breakpoints(0.0, t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(
            lambda s: np.exp(2.0 * (phi_t - F.integral(0.0, s))), 0.0, t, points=points or None, **_QUAD
        )
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericalError(f"quadrature of the constant did not converge (error estimate {err:.2e})")
    return val


def tci_constant(spec, method="auto", rtol=1e-6):
    """The transportation-cost constant ``C`` for ``spec``.

    ``method="auto"`` uses the closed form ``|A| (e^{2 F T} - 1) / (2 F)``
    (``|A| T`` at ``F = 0``) for constant ``F`` and quadrature otherwise;
    ``method="quadrature"`` always integrates numerically. The supremum over
    ``t`` is taken on a grid that is doubled, then polished with a bounded
    scalar search, until it changes by less than ``rtol`` relative.
    """
    if not isinstance(spec, TciConstantSpec):
        raise ConfigError("spec must be a TciConstantSpec")
    if method not in ("auto", "quadrature"):
        raise ConfigError(f"method must be 'auto' or 'quadrature', got {method!r}")
    F, T = spec.F, spec.T
    if method == "auto" and F.kind == "constant":
        return spec.normA * _closed_form(F.value, T)
    grid = np.unique(np.concatenate([np.linspace(0.0, T, 17), F.breakpoints(0.0, T)]))
    best = -np.inf
    for _ in range(12):
        vals = np.array([_inner_integral(F, t) for t in grid])
        j = int(np.argmax(vals))
        top = vals[j]
        lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(
                lambda t: -_inner_integral(F, t), bounds=(lo, hi), method="bounded", options=dict(xatol=1e-10 * T)
            )
            top = max(top, -res.fun)
        if abs(top - best) <= rtol * abs(top):
            return spec.normA * max(top, best)
        best = max(best, top)
        grid = np.unique(np.concatenate([grid, 0.5 * (grid[1:] + grid[:-1])]))
    raise NumericalError("supremum over t did not stabilize")


def tci_constant_cbp(kind, c, T):
    """Constant for competing particles: ``T`` (named) or ``T sup sigma^2`` (ranked).

    The named case requires nonincreasing drifts and unit volatilities and
    raises HypothesisError otherwise.
    """
    T = check_positive(T, "T")
    if not isinstance(c, RankCoefficients):
        raise ConfigError("c must be RankCoefficients")
    if kind == "named":
        report = validate_coefficients(c)
        if not report.nonincreasing_drifts:
            raise HypothesisError("named-particle constant needs nonincreasing drifts g_1 >= g_2 >= ...")
        if not np.all(c.sigma == 1.0):
            raise HypothesisError("named-particle constant needs sigma_k = 1 for every rank")
        return T
    if kind == "ranked":
        return T * c.sup_sigma2
    raise ConfigError(f"kind must be 'named' or 'ranked', got {kind!r}")


# ---------------------------------------------------------------------------
# systems


class ReflectedSystem:
    """Reflected diffusion in a polyhedral domain.

    ``observed`` lists the coordinates entering the sup-norm path metric
    (all of them by default).
    """

    kind = "reflected"

    def __init__(self, domain, drift=None, A=None, z0=None, observed=None, label="reflected"):
        self.domain = domain
        self.dim = domain.dim
        self.drift = DriftField.constant(np.zeros(self.dim)) if drift is None else drift
        self.A = DiffusionMatrix.identity(self.dim) if A is None else (A if isinstance(A, DiffusionMatrix) else DiffusionMatrix(A))
        self.z0 = domain.witness.copy() if z0 is None else np.asarray(z0, dtype=float)
        self.observed = None if observed is None else np.asarray(observed, dtype=int)
        self.label = label

    @property
    def bound(self):
        if self.drift.one_sided_bound is None:
            raise HypothesisError(f"drift '{self.drift.label}' has no one-sided Lipschitz bound F")
        return self.drift.one_sided_bound

    def check(self):
        """Raise HypothesisError unless the drift has a one-sided bound."""
        if self.drift.one_sided_bound is None:
            raise HypothesisError(f"drift '{self.drift.label}' has no one-sided Lipschitz bound F")
        return self

    def constant(self, T):
        return tci_constant(TciConstantSpec(self.A.opnorm, self.bound, T))

    def coupled(self, gamma, T, dt, M, seed, stream, gronwall=None, record_every=None, workers=None):
        n, _ = check_grid(T, dt)
        return simulate_coupled_pair(
            self.domain, self.drift, self.A, self.z0, gamma, T, dt, M, seed, stream,
            record_every=n if record_every is None else record_every,
            observed=self.observed, gronwall=gronwall, workers=workers,
        )  # fmt: skip

    def sample(self, T, dt, M, seed, stream, record_every=1, perturbation=None, path_offset=0, workers=None):
        """Observed coordinates of ``M`` paths, under the tilted law if ``perturbation`` is given."""
        res = simulate_reflected(
            self.domain, self.drift, self.A, self.z0, T, dt, M, seed, stream, record_every,
            workers=workers, perturbation=perturbation, path_offset=path_offset,
        )  # fmt: skip
        return res.path if self.observed is None else res.path.coordinates(self.observed)


class NamedParticleSystem(ReflectedSystem):
    """Named competing particles: an unreflected diffusion with rank-based drift.

    The constant is ``T``; unit volatilities and nonincreasing drifts are
    required.
    """

    kind = "named"

    def __init__(self, coefficients, x0, observed=None, label="named"):
        c = coefficients
        x0 = np.asarray(x0, dtype=float)
        self.coefficients = c
        self.N = x0.shape[0]
        if not np.all(c.sigmas(self.N) == 1.0):
            raise HypothesisError("named particles need sigma_k = 1 for every rank")
        super().__init__(whole_space(self.N), DriftField.rank_based(c.drifts(self.N)), None, x0, observed, label)

    def constant(self, T):
        trunc = RankCoefficients(self.coefficients.drifts(self.N), self.coefficients.sigmas(self.N))
        return tci_constant_cbp("named", trunc, T)


class RankedParticleSystem(ReflectedSystem):
    """Ranked competing particles as normally reflected Brownian motion in the wedge.

    The ranked vector has constant drift ``g`` and covariance
    ``diag(sigma^2)`` inside ``{y_1 <= ... <= y_N}``. ``k`` restricts the
    path metric to the lowest ``k`` ranks. Coefficients must satisfy the
    concavity condition on ``sigma^2`` so that the coupled pair is a strong
    solution.
    """

    kind = "ranked"

    def __init__(self, coefficients, x0, k=None, label="ranked"):
        c = coefficients
        x0 = np.sort(np.asarray(x0, dtype=float))
        N = x0.shape[0]
        self.coefficients = c
        self.N = N
        self.k = N if k is None else check_count(k, "k")
        if self.k > N:
            raise ConfigError(f"k = {self.k} exceeds N = {N}")
        report = validate_coefficients(c, N)
        if not report.strong_uniqueness:
            raise HypothesisError(
                "sigma^2 violates the concavity condition sigma_n^2 >= (sigma_{n-1}^2 + sigma_{n+1}^2) / 2"
            )
        observed = None if self.k == N else np.arange(self.k)
        super().__init__(
            wedge(N), DriftField.constant(c.drifts(N)), DiffusionMatrix.diagonal(c.sigmas(N) ** 2), x0, observed, label
        )

    def constant(self, T):
        return tci_constant_cbp("ranked", self.coefficients, T)


class TruncatedInfiniteSystem(RankedParticleSystem):
    """First ``k`` ranks of the ``N``-particle truncation of an infinite system."""

    kind = "truncated-infinite"

    def __init__(self, coefficients, N, x0_rule, k=1, label="truncated-infinite"):
        if not coefficients.tail:
            raise ConfigError("an infinite system needs tail-constant coefficients")
        check_initial_rule(x0_rule)
        N = check_count(N, "N")
        self.x0_rule = x0_rule
        super().__init__(coefficients, np.asarray(x0_rule(np.arange(1, N + 1)), dtype=float), k, label)


# ---------------------------------------------------------------------------
# verification


@dataclass
class GammaResult:
    """Outcome of both checks for one perturbation."""

    gamma_id: str
    H: float
    lhs: float
    lhs_se: float
    rhs: float
    margin: float
    stat_slack: float
    disc_slack: float
    disc_constant: float
    verdict: str
    lhs_refined: float = float("nan")
    gronwall_fraction: float = 0.0
    gronwall_fraction_refined: float = 0.0
    gronwall_max_excess: float = float("-inf")
    gronwall_max_excess_refined: float = float("-inf")
    gronwall_slack: float = 0.0
    sign_max: float = float("-inf")
    sign_min: float = float("inf")
    n_reflections: int = 0
    w2_small: float = float("nan")
    w2_large: float = float("nan")
    w2_floor: float = float("nan")
    w2_trend: float = float("nan")
    margin_B: float = float("nan")
    verdict_B: str = "skipped"
    ot_sizes: tuple = ()
    ot_method: str = ""


@dataclass
class TciReport:
    """Check results for one scenario; serializes to JSON and flat CSV."""

    scenario: str
    kind: str
    C: float
    T: float
    dt: float
    M: int
    seed: int
    results: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.verdict == "pass" for r in self.results)

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
            if isinstance(v, tuple):
                return list(v)
            return v

        d = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION}
        d.update({k: v for k, v in asdict(self).items() if k != "results"})
        d["results"] = [{k: clean(v) for k, v in asdict(r).items()} for r in self.results]
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv_rows(self):
        for r in self.results:
            yield [self.scenario, r.gamma_id] + [repr(float(v)) for v in (self.C, r.H, r.lhs, r.rhs, r.margin)] + [r.verdict]

    def write_csv(self, path, header=True, mode="w"):
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if header:
                w.writerow(CSV_COLUMNS)
            w.writerows(self.csv_rows())


def _gamma_id(i, gamma):
    return f"{i}:{gamma.label}"


def _w2(P, Q, exact, ladder):
    mu, nu = EmpiricalMeasure(P), EmpiricalMeasure(Q)
    if exact:
        return wasserstein_exact(mu, nu, cap=max(mu.size, nu.size)).value
    return entropic_ladder(mu, nu, ladder=ladder, C=cost_matrix(mu, nu))[-1].value


def verify_tci(
    system,
    gammas,
    T,
    dt,
    M,
    seed,
    refine=10,
    refine_paths=None,
    disc_constant=None,
    ot_paths=(128, 256),
    workers=None,
    label=None,
    exact_cap=EXACT_CAP,
    ladder=DEFAULT_LADDER,
):
    """Run check A (coupling bound) and check B (OT diagnostic) for each ``gamma``.

    Check A: the synchronous coupling gives ``lhs = E sup_t |X - X'|^2``
    (observed coordinates) with standard error ``se``; it passes when
    ``2 C H - lhs >= -(3 se + c sqrt(dt))``. Unless ``disc_constant`` is
    given, ``c`` comes from repeating the run at ``dt / refine`` with
    ``refine_paths`` paths: ``c = |lhs(dt) - lhs(dt/refine)| / (sqrt(dt) - sqrt(dt/refine))``.
    The same pair of runs reports the fraction of grid points where
    ``|X - X'|`` exceeds its pathwise integral bound by more than
    ``k sqrt(dt)``.

    Check B: ``W_2`` between independent P- and Q-samples of sizes
    ``ot_paths``; it passes when ``sqrt(2 C H) - W_2 >= -floor``, where the
    floor is ``W_2`` between two independent P-samples of the larger size.
    Sizes up to ``exact_cap`` use the exact solver, larger ones the
    entropic ``ladder``. ``ot_paths=None`` skips it.
    """
    if not gammas:
        raise ConfigError("at least one perturbation is required")
    system.check()
    n, dt = check_grid(T, dt)
    M = check_count(M, "M", minimum=2)
    refine = check_count(refine, "refine")
    refine_paths = max(2, M // 5) if refine_paths is None else check_count(refine_paths, "refine_paths", minimum=2)
    C = system.constant(T)
    F = system.bound
    report = TciReport(label or system.label, system.kind, float(C), float(T), float(dt), M, int(seed))
    for i, gamma in enumerate(gammas):
        if not isinstance(gamma, DriftPerturbation):
            gamma = DriftPerturbation.constant(gamma)
        if gamma.dim != system.dim:
            raise ConfigError(f"perturbation {i} has dimension {gamma.dim}, system has {system.dim}")
        if not gamma.deterministic:
            raise ConfigError("verification needs deterministic perturbations (exact entropy)")
        H = relative_entropy_drift(gamma, T)
        rhs = 2.0 * C * H
        kslack = gronwall_slack_constant(gamma, F, T, system.A)
        runs = []
        plan = [(M, dt)] + ([(refine_paths, dt / refine)] if refine > 1 else [])
        for m_, dt_ in plan:
            n_ = check_grid(T, dt_)[0]
            times = np.arange(n_ + 1) * (T / n_)
            bound = gronwall_bound(gamma, F, times, system.A)
            pair = system.coupled(
                gamma, T, dt_, m_, seed, 16 * i + len(runs), gronwall=(bound, kslack * np.sqrt(dt_)), workers=workers
            )
            runs.append(pair)
        main = runs[0]
        lhs = float(main.sup_sq.mean())
        se = float(main.sup_sq.std(ddof=1) / np.sqrt(M))
        res = GammaResult(
            gamma_id=_gamma_id(i, gamma), H=float(H), lhs=lhs, lhs_se=se, rhs=float(rhs), margin=float(rhs - lhs),
            stat_slack=3.0 * se, disc_slack=0.0, disc_constant=0.0, verdict="",
            gronwall_fraction=main.gronwall_violations / main.gronwall_points,
            gronwall_max_excess=float(main.gronwall_max_excess), gronwall_slack=float(kslack * np.sqrt(dt)),
            sign_max=float(main.sign_max), sign_min=float(main.sign_min), n_reflections=int(main.n_reflections),
        )  # fmt: skip
        if len(runs) > 1:
            fine = runs[1]
            res.lhs_refined = float(fine.sup_sq.mean())
            res.gronwall_fraction_refined = fine.gronwall_violations / fine.gronwall_points
            res.gronwall_max_excess_refined = float(fine.gronwall_max_excess)
            res.sign_max = max(res.sign_max, float(fine.sign_max))
            res.sign_min = min(res.sign_min, float(fine.sign_min))
            res.n_reflections += int(fine.n_reflections)
        if disc_constant is not None:
            res.disc_constant = float(disc_constant)
        elif len(runs) > 1:
            res.disc_constant = abs(lhs - res.lhs_refined) / (np.sqrt(dt) - np.sqrt(dt / refine))
        res.disc_constant = float(res.disc_constant)
        res.disc_slack = res.disc_constant * float(np.sqrt(dt))
        res.verdict = "pass" if res.margin >= -(res.stat_slack + res.disc_slack) else "fail"
        if ot_paths:
            _check_b(system, gamma, i, T, dt, seed, ot_paths, rhs, res, workers, exact_cap, ladder)
        report.results.append(res)
    return report


def _check_b(system, gamma, i, T, dt, seed, ot_paths, rhs, res, workers, exact_cap, ladder):
    small, large = (check_count(m, "ot_paths") for m in ot_paths)
    if small > large:
        raise ConfigError("ot_paths must be (smaller, larger)")
    exact = large <= exact_cap
    base = 16 * i + 8
    P = system.sample(T, dt, large, seed, base, workers=workers).values
    if gamma.is_zero:
        Q = P
    else:
        Q = system.sample(T, dt, large, seed, base + 1, perturbation=gamma, workers=workers).values
    P2 = system.sample(T, dt, large, seed, base + 2, workers=workers).values
    res.w2_small = _w2(P[:small], Q[:small], exact, ladder)
    res.w2_large = _w2(P, Q, exact, ladder)
    res.w2_floor = _w2(P, P2, exact, ladder)
    res.w2_trend = res.w2_large - res.w2_small
    res.margin_B = float(np.sqrt(rhs) - res.w2_large)
    res.verdict_B = "pass" if res.margin_B >= -res.w2_floor else "fail"
    res.ot_sizes = (small, large)
    res.ot_method = "exact" if exact else "entropic"


# ---------------------------------------------------------------------------
# concentration


class PathFunctional:
    """Real functional of observed paths with a claimed sup-norm Lipschitz constant.

    ``func`` maps an array of paths ``(m, times, k)`` to ``(m,)``. With
    ``terminal_only`` only the final grid time is needed.
    """

    def __init__(self, func, lipschitz, label="functional", terminal_only=False):
        self.func = func
        self.lipschitz = check_positive(lipschitz, "lipschitz", strict=False)
        self.label = label
        self.terminal_only = terminal_only

    def __call__(self, paths):
        return np.asarray(self.func(paths), dtype=float)

    @classmethod
    def terminal(cls, coord=0):
        return cls(lambda p: p[:, -1, coord], 1.0, f"terminal[{coord}]", True)

    @classmethod
    def running_max(cls, coord=0):
        return cls(lambda p: p[:, :, coord].max(axis=1), 1.0, f"max[{coord}]")

    @classmethod
    def constant(cls, value=0.0):
        return cls(lambda p: np.full(p.shape[0], float(value)), 0.0, "constant", True)


def verify_lipschitz(functional, paths, num_pairs=2000, seed=0, rtol=1e-12):
    """Count pairs with ``|f(x) - f(y)| > L |x - y|_sup``.

    Pairs are random couples of the given paths plus small perturbations of
    them, so both distant and nearby pairs are probed.
    """
    rng = np.random.default_rng(seed)
    m = paths.shape[0]
    i = rng.integers(0, m, num_pairs)
    j = rng.integers(0, m, num_pairs)
    x = paths[i]
    y = np.concatenate([paths[j[: num_pairs // 2]], x[num_pairs // 2 :] + 1e-3 * rng.standard_normal(x[num_pairs // 2 :].shape)])
    dist = np.sqrt(np.max(np.sum((x - y) ** 2, axis=2), axis=1))
    gap = np.abs(functional(x) - functional(y))
    return int(np.count_nonzero(gap > functional.lipschitz * dist * (1 + rtol) + rtol))


@dataclass
class TailRow:
    r: float
    count: int
    tail: float
    lower: float
    upper: float
    bound: float
    verdict: str


@dataclass
class ConcentrationTable:
    scenario: str
    functional: str
    C: float
    L: float
    M: int
    mean: float
    confidence: float
    rows: list

    @property
    def passed(self):
        return all(r.verdict == "pass" for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "functional", "r", "count", "tail", "lower", "upper", "bound", "verdict"])
            for row in self.rows:
                w.writerow(
                    [self.scenario, self.functional, repr(row.r), row.count]
                    + [repr(float(v)) for v in (row.tail, row.lower, row.upper, row.bound)]
                    + [row.verdict]
                )


def concentration_tail(system, functional, r_grid, T, dt, M, seed, confidence=0.99, block=10_000, workers=None):
    """Empirical ``P(f >= mean f + r)`` against ``exp(-r^2 / (2 C L^2))``.

    Tails carry Wilson intervals at ``confidence``; a row passes when the
    upper limit does not exceed the bound. With ``L = 0`` the bound is zero
    for ``r > 0`` and a row passes only if no sample exceeds the mean.
    The Lipschitz claim is probed on sample pairs first; any violation
    raises HypothesisError.
    """
    n, dt = check_grid(T, dt)
    M = check_count(M, "M", minimum=2)
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(r_grid < 0):
        raise ConfigError("r_grid must be nonnegative")
    system.check()
    C = system.constant(T)
    record = n if functional.terminal_only else 1
    values = []
    first = None
    for start in range(0, M, block):
        count = min(block, M - start)
        paths = system.sample(T, dt, count, seed, 0, record_every=record, path_offset=start, workers=workers).values
        if first is None:
            first = paths
        values.append(functional(paths))
    bad = verify_lipschitz(functional, first, seed=seed)
    if bad:
        raise HypothesisError(f"functional '{functional.label}' violates its Lipschitz constant on {bad} sample pairs")
    f = np.concatenate(values)
    mean = float(f.mean())
    L = functional.lipschitz
    rows = []
    for r in r_grid:
        k = int(np.count_nonzero(f >= mean + r))
        lo, hi = proportion_confint(k, M, alpha=1 - confidence, method="wilson")
        bound = float(np.exp(-(r**2) / (2 * C * L**2))) if L > 0 else (1.0 if r == 0 else 0.0)
        ok = (k == 0) if (L == 0 and r > 0) else (hi <= bound)
        rows.append(TailRow(float(r), k, k / M, float(lo), float(hi), bound, "pass" if ok else "fail"))
    return ConcentrationTable(system.label, functional.label, float(C), float(L), M, mean, confidence, rows)


class TciVerifier(BaseEstimator):
    """Estimator-style front end: ``fit(system)`` runs :func:`verify_tci` into ``report_``."""

    def __init__(self, gammas=None, T=1.0, dt=1e-3, M=10_000, seed=0, refine=10, refine_paths=None, ot_paths=(128, 256)):
        self.gammas = gammas
        self.T = T
        self.dt = dt
        self.M = M
        self.seed = seed
        self.refine = refine
        self.refine_paths = refine_paths
        self.ot_paths = ot_paths

    def fit(self, system, y=None):
        gammas = self.gammas
        if gammas is None:
            e1 = np.zeros(system.dim)
            e1[0] = 1.0
            gammas = [DriftPerturbation.constant(s * e1, f"{s}e1") for s in (0.5, 1.0, 2.0)]
        self.report_ = verify_tci(
            system, gammas, self.T, self.dt, self.M, self.seed, self.refine, self.refine_paths, ot_paths=self.ot_paths
        )
        self.C_ = self.report_.C
        return self

    def predict(self, system=None):
        """Check-A verdicts per perturbation (``True`` for pass)."""
        return np.array([r.verdict == "pass" for r in self.report_.results])
