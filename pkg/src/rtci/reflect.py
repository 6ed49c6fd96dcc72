"""Normally reflected diffusions in convex polyhedra.

Paths are produced by projected Euler: an unconstrained Euler step followed
by Euclidean projection onto the domain. The projection displacement is the
discrete increment of the boundary local time, and its direction is the
recorded inward normal.

The coupled pair drives two copies with the same Gaussian increments, one of
them carrying an extra drift ``sqrt(A) gamma(t)``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator

from ._kernels import DRIFT_CONSTANT, DRIFT_LINEAR, DRIFT_RANK, G_MAX, SIGN_MAX, SIGN_MIN, N_REFL, G_VIOL, STATUS
from ._kernels import reflected_paths
from ._parallel import DEFAULT_CHUNK, map_chunks
from ._rng import derive_key, normals
from .bundle import PathBundle
from .domain import PolyhedralDomain, contains, wedge_push_dot
from .particles import rank_drift
from .validation import (
    ConfigError,
    NumericalError,
    HypothesisError,
    check_count,
    check_grid,
    check_rows,
    check_symmetric_pd,
    check_vector,
)

_NOISE_BLOCK = 1 << 21
_QUAD = dict(epsabs=1e-14, epsrel=1e-13, limit=200)


def _quad(func, a, b):
    # scipy warns about roundoff for integrals near zero; judge by the error estimate instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(func, a, b, **_QUAD)
    if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise NumericalError(f"quadrature on [{a}, {b}] did not converge (error estimate {err:.2e})")
    return val


class OneSidedBound:
    """Integrable function ``F(t)`` bounding the drift's one-sided Lipschitz constant.

    Build with :meth:`constant`, :meth:`piecewise` or :meth:`from_function`.
    Integrals are exact for the first two forms.
    """

    def __init__(self, kind, value=None, times=None, values=None, func=None):
        self.kind = kind
        self.value = value
        self.times = times
        self.values = values
        self.func = func

    @classmethod
    def constant(cls, value):
        value = float(value)
        if not np.isfinite(value):
            raise ConfigError("one-sided bound must be finite")
        return cls("constant", value=value)

    @classmethod
    def piecewise(cls, times, values):
        """``F(t) = values[i]`` on ``[times[i], times[i+1])``; last value extends to infinity."""
        times = check_vector(times, name="times")
        values = check_vector(values, times.shape[0], "values")
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise ConfigError("piecewise breakpoints must start at 0 and increase")
        return cls("piecewise", times=times, values=values)

    @classmethod
    def from_function(cls, func):
        return cls("callable", func=func)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, self.value) if t.ndim else self.value
        if self.kind == "piecewise":
            idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
            return self.values[idx] if t.ndim else float(self.values[idx])
        return np.vectorize(self.func, otypes=[float])(t) if t.ndim else float(self.func(float(t)))

    def breakpoints(self, a, b):
        if self.kind != "piecewise":
            return []
        return [float(t) for t in self.times if a < t < b]

    def _pw_integral(self, a, b, absolute):
        edges = np.concatenate([self.times, [np.inf]])
        total = 0.0
        for i, v in enumerate(self.values):
            lo, hi = max(a, edges[i]), min(b, edges[i + 1])
            if hi > lo:
                total += (abs(v) if absolute else v) * (hi - lo)
        return total

    def integral(self, a, b):
        """``int_a^b F(u) du`` for ``a <= b``."""
        if self.kind == "constant":
            return self.value * (b - a)
        if self.kind == "piecewise":
            return self._pw_integral(a, b, False)
        return _quad(self.func, a, b)

    def abs_integral(self, a, b):
        if self.kind == "constant":
            return abs(self.value) * (b - a)
        if self.kind == "piecewise":
            return self._pw_integral(a, b, True)
        return _quad(lambda u: abs(self.func(u)), a, b)

    def __repr__(self):
        if self.kind == "constant":
            return f"OneSidedBound.constant({self.value})"
        return f"OneSidedBound({self.kind})"


def as_bound(F):
    if isinstance(F, OneSidedBound):
        return F
    if callable(F):
        return OneSidedBound.from_function(F)
    return OneSidedBound.constant(F)


class DriftField:
    """Drift ``g(t, x)`` evaluated on rows ``x`` of shape ``(m, d)``.

    ``one_sided_bound`` is the claimed ``F`` with
    ``(g(t,x) - g(t,y)) . (x - y) <= F(t) |x - y|^2``, or None if unknown.
    """

    def __init__(self, evaluator, one_sided_bound=None, label="drift", time_homogeneous=False, kernel=None):
        self.evaluator = evaluator
        # (code, vector, matrix) for the fused path loop; None for custom drifts
        self.kernel = kernel
        self.time_homogeneous = time_homogeneous
        self.one_sided_bound = None if one_sided_bound is None else as_bound(one_sided_bound)
        self.label = label

    def __call__(self, t, x):
        return self.evaluator(t, x)

    @classmethod
    def constant(cls, g):
        g = check_vector(g, name="g")
        kernel = (DRIFT_CONSTANT, g, np.zeros((1, 1)))
        return cls(lambda t, x: np.broadcast_to(g, x.shape), OneSidedBound.constant(0.0), "constant", True, kernel)

    @classmethod
    def linear(cls, matrix, offset=None):
        """``g(x) = matrix @ x + offset``; ``F`` is the top eigenvalue of the symmetric part."""
        K = np.atleast_2d(np.asarray(matrix, dtype=float))
        b = np.zeros(K.shape[0]) if offset is None else check_vector(offset, K.shape[0], "offset")
        F = float(np.linalg.eigvalsh(0.5 * (K + K.T)).max())
        return cls(lambda t, x: x @ K.T + b, OneSidedBound.constant(F), "linear", True, (DRIFT_LINEAR, b, K))

    @classmethod
    def rank_based(cls, g):
        """Named competing-particle drift ``g_{rank(i)}``.

        Nonincreasing ``g`` satisfies the contraction condition (``F = 0``);
        otherwise no finite one-sided bound exists.
        """
        g = check_vector(g, name="g")
        F = OneSidedBound.constant(0.0) if np.all(np.diff(g) <= 0) else None
        return cls(lambda t, x: rank_drift(g, x), F, "rank-based", True, (DRIFT_RANK, g, np.zeros((1, 1))))


@dataclass(frozen=True, eq=False)
class DiffusionMatrix:
    """Constant symmetric positive-definite covariance ``A`` with its square root."""

    A: np.ndarray

    def __post_init__(self):
        A = check_symmetric_pd(self.A)
        w, v = np.linalg.eigh(A)
        sqrt = (v * np.sqrt(w)) @ v.T
        sqrt = 0.5 * (sqrt + sqrt.T)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sqrt", sqrt)
        object.__setattr__(self, "opnorm", float(w.max()))
        object.__setattr__(self, "is_identity", bool(np.array_equal(A, np.eye(A.shape[0]))))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @classmethod
    def diagonal(cls, values):
        return cls(np.diag(check_vector(values, name="diagonal")))

    @property
    def dim(self):
        return self.A.shape[0]


class DriftPerturbation:
    """Extra drift ``gamma`` defining the tilted measure.

    Deterministic perturbations depend on time only: ``func(t) -> (d,)``.
    Adapted ones take the state too: ``func(t, x) -> (m, d)``.
    """

    def __init__(self, func, dim, deterministic=True, label="gamma", constant_value=None):
        self.func = func
        self.dim = int(dim)
        self.deterministic = deterministic
        self.label = label
        self.constant_value = constant_value
        self._sq_cache = {}

    @classmethod
    def constant(cls, vector, label=None):
        v = check_vector(vector, name="gamma")
        return cls(lambda t: v, v.shape[0], True, label or "constant", constant_value=v)

    @classmethod
    def zero(cls, dim):
        return cls.constant(np.zeros(dim), "zero")

    @classmethod
    def linear_in_time(cls, vector):
        """``gamma(t) = vector * t``."""
        v = check_vector(vector, name="gamma")
        return cls(lambda t: v * t, v.shape[0], True, "linear-in-time")

    @classmethod
    def adapted(cls, func, dim, label="adapted"):
        return cls(func, dim, False, label)

    @property
    def is_zero(self):
        return self.constant_value is not None and not np.any(self.constant_value)

    def at(self, t):
        if not self.deterministic:
            raise ConfigError("adapted perturbation needs the state; call with (t, x)")
        return np.asarray(self.func(t), dtype=float).reshape(self.dim)

    def values(self, times):
        """``gamma(t)`` for each time, shape ``(len(times), dim)``."""
        if self.constant_value is not None:
            return np.broadcast_to(self.constant_value, (len(times), self.dim)).copy()
        return np.array([self.at(t) for t in times]).reshape(len(times), self.dim)

    def square_integral(self, a, b=None):
        """``int |gamma(t)|^2 dt`` over ``[0, a]`` or ``[a, b]``."""
        if not self.deterministic:
            raise ConfigError("square integral is defined for deterministic perturbations only")
        lo, hi = (0.0, float(a)) if b is None else (float(a), float(b))
        if (lo, hi) not in self._sq_cache:
            if self.constant_value is not None:
                val = float(self.constant_value @ self.constant_value) * (hi - lo)
            else:
                val = integrate.quad(lambda t: float(self.at(t) @ self.at(t)), lo, hi, **_QUAD)[0]
            self._sq_cache[(lo, hi)] = val
        return self._sq_cache[(lo, hi)]

    def sup_norm(self, T, n_grid=4097):
        if self.constant_value is not None:
            return float(np.linalg.norm(self.constant_value))
        return float(np.linalg.norm(self.values(np.linspace(0.0, T, n_grid)), axis=1).max())

    def __repr__(self):
        return f"DriftPerturbation({self.label})"


@dataclass(frozen=True, eq=False)
class ReflectedPath:
    """Reflected sample paths with local time and (optionally) step normals.

    ``normals[i, j]`` is the unit push direction applied on step ``j`` of
    path ``i``, or zero when that step needed no projection.
    """

    path: PathBundle
    localtime: np.ndarray
    normals: np.ndarray = None


@dataclass(frozen=True, eq=False)
class CoupledPair:
    """Synchronously coupled paths: ``X`` carries the perturbation, ``Xp`` does not.

    Besides the (possibly subsampled) paths, full-resolution statistics are
    kept per path: ``sup_sq`` is ``sup_t |X - Xp|^2`` over the observed
    coordinates and ``sup_sq_full`` over all of them. ``sign_max`` is the
    largest ``n . (X - Xp)`` over projection steps of ``X``; ``sign_min``
    the smallest ``n' . (X - Xp)`` over projection steps of ``Xp``.
    """

    X: ReflectedPath
    Xp: ReflectedPath
    sup_sq: np.ndarray
    sup_sq_full: np.ndarray
    sign_max: float
    sign_min: float
    n_reflections: int
    gronwall_violations: int = 0
    gronwall_points: int = 0
    gronwall_max_excess: float = -np.inf

    def __iter__(self):
        return iter((self.X, self.Xp))


def _check_setup(domain, drift, diffusion, z0):
    if not isinstance(domain, PolyhedralDomain):
        raise ConfigError("domain must be a PolyhedralDomain")
    if not isinstance(diffusion, DiffusionMatrix):
        diffusion = DiffusionMatrix(diffusion)
    if diffusion.dim != domain.dim:
        raise ConfigError(f"diffusion matrix is {diffusion.dim}-dimensional, domain is {domain.dim}-dimensional")
    if not isinstance(drift, DriftField):
        drift = DriftField.constant(drift)
    z0 = check_vector(z0, domain.dim, "z0")
    if not contains(domain, z0, tol=1e-12 * (1 + np.abs(z0).max())):
        raise ConfigError("starting point lies outside the domain")
    return drift, diffusion, z0


def _push_dot(domain, unit, hat, x, diff, disp, hit):
    """``n . diff`` for each projected row; wedge pushes go through their face multipliers."""
    if not domain.is_wedge:
        return np.sum(unit * diff[hit], axis=1)
    rows = np.flatnonzero(hit)
    return np.array([wedge_push_dot(hat[i], x[i], diff[i], disp[i]) for i in rows])


def _engine(domain, drift, diffusion, z0, n, dt, key, start, count, record_every, shift, observed, gronwall, pair):
    """Run ``count`` paths starting at global index ``start``.

    ``shift`` is an ``(n, d)`` array of extra per-step drift, a callable
    ``(t, x) -> (m, d)``, or None. With ``pair`` the unperturbed copy is
    advanced in lockstep with the same increments.
    """
    d = domain.dim
    sq = np.sqrt(dt)
    n_rec = n // record_every
    x = np.repeat(z0[None, :], count, axis=0)
    rec = np.empty((count, n_rec + 1, d))
    rec[:, 0] = x
    lt = np.zeros(count)
    lt_rec = np.zeros((count, n_rec + 1))
    keep_normals = record_every == 1
    nrm = np.zeros((count, n, d)) if keep_normals else None
    if pair:
        xp = x.copy()
        recp = rec.copy()
        ltp = np.zeros(count)
        ltp_rec = np.zeros((count, n_rec + 1))
        nrmp = np.zeros((count, n, d)) if keep_normals else None
        sup_sq = np.zeros(count)
        sup_full = np.zeros(count)
        sign_max, sign_min, n_refl = -np.inf, np.inf, 0
        g_viol, g_max = 0, -np.inf
    identity = diffusion.is_identity
    root = diffusion.sqrt
    block = max(1, min(n, _NOISE_BLOCK // max(1, count * d)))
    for j0 in range(0, n, block):
        b = min(block, n - j0)
        xi = normals(key, start, count, j0, b, d)
        for s in range(b):
            j = j0 + s
            t = j * dt
            dw = xi[:, s] * sq if identity else (xi[:, s] @ root) * sq
            hat = x + drift(t, x) * dt + dw
            if shift is not None:
                hat = hat + (shift(t, x) if callable(shift) else shift[j]) * dt
            x = hat.copy()
            _, disp = domain.project_rows(x)
            lt += disp
            hit = disp > 0
            if np.any(hit):
                unit = (x[hit] - hat[hit]) / disp[hit, None]
                if keep_normals:
                    nrm[hit, j] = unit
            if pair:
                hatp = xp + drift(t, xp) * dt + dw
                xp = hatp.copy()
                _, dispp = domain.project_rows(xp)
                ltp += dispp
                hitp = dispp > 0
                diff = x - xp
                if np.any(hit):
                    sign_max = max(sign_max, _push_dot(domain, unit, hat, x, diff, disp, hit).max())
                    n_refl += int(hit.sum())
                if np.any(hitp):
                    unitp = (xp[hitp] - hatp[hitp]) / dispp[hitp, None]
                    if keep_normals:
                        nrmp[hitp, j] = unitp
                    sign_min = min(sign_min, _push_dot(domain, unitp, hatp, xp, diff, dispp, hitp).min())
                    n_refl += int(hitp.sum())
                sq_full = np.einsum("ij,ij->i", diff, diff)
                np.maximum(sup_full, sq_full, out=sup_full)
                if observed is None:
                    np.maximum(sup_sq, sq_full, out=sup_sq)
                else:
                    do = diff[:, observed]
                    np.maximum(sup_sq, np.einsum("ij,ij->i", do, do), out=sup_sq)
                if gronwall is not None:
                    bound, slack = gronwall
                    excess = np.sqrt(sq_full) - bound[j + 1]
                    g_viol += int(np.count_nonzero(excess > slack))
                    g_max = max(g_max, float(excess.max()))
            if (j + 1) % record_every == 0:
                r = (j + 1) // record_every
                rec[:, r] = x
                lt_rec[:, r] = lt
                if pair:
                    recp[:, r] = xp
                    ltp_rec[:, r] = ltp
    if not pair:
        return rec, lt_rec, nrm
    if gronwall is not None:
        # Y(0) = 0 sits under any nonnegative bound
        g_max = max(g_max, -float(gronwall[0][0]))
    return (rec, lt_rec, nrm), (recp, ltp_rec, nrmp), sup_sq, sup_full, sign_max, sign_min, n_refl, g_viol, g_max


def _fused(domain, drift, diffusion, z0, n, dt, key, start, count, record_every, shift, observed, gronwall, pair):
    """Same contract as :func:`_engine` for built-in drifts and deterministic shifts."""
    d = domain.dim
    n_rec = n // record_every
    keep_normals = record_every == 1
    kind, dvec, dmat = drift.kernel
    rec = np.empty((count, n_rec + 1, d))
    lt_rec = np.empty((count, n_rec + 1))
    nrm = np.zeros((count, n, d) if keep_normals else (1, 1, d))
    if pair:
        recp = np.empty_like(rec)
        ltp_rec = np.empty_like(lt_rec)
        nrmp = np.zeros_like(nrm)
    else:
        recp, ltp_rec, nrmp = rec[:0], lt_rec[:0], nrm[:0]
    sup_sq = np.zeros(count)
    sup_full = np.zeros(count)
    stats = np.array([-np.inf, np.inf, 0.0, 0.0, -np.inf, 0.0])
    obs_mask = np.ones(d, dtype=np.bool_)
    if observed is not None:
        obs_mask[:] = False
        obs_mask[observed] = True
    bound, slack = gronwall if gronwall is not None else (np.zeros(1), 0.0)
    reflected_paths(
        z0, n, dt, np.uint32(key & 0xFFFFFFFF), np.uint32(key >> 32), start, count,
        kind, np.asarray(dvec, dtype=float), np.asarray(dmat, dtype=float),
        domain.normals, domain.offsets, domain.is_wedge, diffusion.sqrt, diffusion.is_identity,
        shift if shift is not None else np.zeros((1, d)), shift is not None, pair,
        obs_mask, np.asarray(bound, dtype=float), float(slack), gronwall is not None,
        record_every, keep_normals,
        rec, lt_rec, nrm, recp, ltp_rec, nrmp, sup_sq, sup_full, stats,
    )  # fmt: skip
    if stats[STATUS]:
        raise NumericalError("projection onto the domain did not converge")
    nrm = nrm if keep_normals else None
    if not pair:
        return rec, lt_rec, nrm
    nrmp = nrmp if keep_normals else None
    g_max = stats[G_MAX]
    if gronwall is not None:
        g_max = max(g_max, -float(gronwall[0][0]))
    return (
        (rec, lt_rec, nrm),
        (recp, ltp_rec, nrmp),
        sup_sq,
        sup_full,
        float(stats[SIGN_MAX]),
        float(stats[SIGN_MIN]),
        int(stats[N_REFL]),
        int(stats[G_VIOL]),
        float(g_max),
    )


def _pick_engine(engine, drift, shift):
    if engine not in ("auto", "fused", "array"):
        raise ConfigError(f"engine must be 'auto', 'fused' or 'array', got {engine!r}")
    fusable = drift.kernel is not None and not callable(shift)
    if engine == "fused" and not fusable:
        raise ConfigError("the fused engine needs a built-in drift and a deterministic perturbation")
    return _fused if fusable and engine != "array" else _engine


def _record_every(n, record_every):
    record_every = check_count(record_every, "record_every")
    if n % record_every:
        raise ConfigError(f"record_every={record_every} must divide the number of steps {n}")
    return record_every


def simulate_reflected(
    domain,
    drift,
    A,
    z0,
    T,
    dt,
    M,
    seed,
    stream=0,
    record_every=1,
    chunk_size=DEFAULT_CHUNK,
    workers=None,
    perturbation=None,
    engine="auto",
    path_offset=0,
):
    """Projected-Euler paths of the reflected diffusion started at ``z0``.

    ``perturbation`` (a DriftPerturbation) adds ``sqrt(A) gamma`` to the
    drift, which samples the tilted law on its own. ``engine="array"``
    forces the vectorized loop that also serves custom drifts; the default
    uses the fused per-path loop whenever the drift allows it.
    ``path_offset`` shifts the global path indices, so a large sample can be
    drawn block by block with the same result as a single call.
    """
    drift, diffusion, z0 = _check_setup(domain, drift, A, z0)
    n, dt = check_grid(T, dt)
    M = check_count(M, "M")
    record_every = _record_every(n, record_every)
    shift = _shift(perturbation, diffusion, n, dt)
    path_offset = check_count(path_offset, "path_offset", minimum=0)
    key = derive_key(seed, stream)
    run = _pick_engine(engine, drift, shift)
    parts = map_chunks(
        lambda s, c: run(
            domain, drift, diffusion, z0, n, dt, key, s + path_offset, c, record_every, shift, None, None, False
        ),
        M,
        chunk_size,
        workers,
    )
    return _assemble(parts, dt * record_every, seed, record_every == 1)


def _assemble(parts, dt, seed, with_normals):
    values = np.concatenate([p[0] for p in parts])
    lt = np.concatenate([p[1] for p in parts])
    nrm = np.concatenate([p[2] for p in parts]) if with_normals else None
    return ReflectedPath(PathBundle(values, dt, seed), lt, nrm)


def _shift(perturbation, diffusion, n, dt):
    if perturbation is None or perturbation.is_zero:
        return None
    if perturbation.dim != diffusion.dim:
        raise ConfigError(f"perturbation has dimension {perturbation.dim}, expected {diffusion.dim}")
    if perturbation.deterministic:
        gam = perturbation.values(np.arange(n) * dt)
        return gam if diffusion.is_identity else gam @ diffusion.sqrt
    if diffusion.is_identity:
        return perturbation.func
    return lambda t, x: perturbation.func(t, x) @ diffusion.sqrt


def simulate_coupled_pair(
    domain,
    drift,
    A,
    z0,
    gamma,
    T,
    dt,
    M,
    seed,
    stream=0,
    record_every=1,
    observed=None,
    gronwall=None,
    chunk_size=DEFAULT_CHUNK,
    workers=None,
    engine="auto",
):
    """Synchronous coupling of the perturbed and unperturbed reflected diffusions.

    Both copies use identical Gaussian increments; ``X`` additionally moves
    by ``sqrt(A) gamma(t) dt`` per step. ``observed`` restricts the
    sup-distance statistic to a subset of coordinates. ``gronwall`` is an
    optional ``(bound, slack)`` pair of a per-grid-time bound on
    ``|X - Xp|`` and an additive slack, counted at full resolution.
    """
    drift, diffusion, z0 = _check_setup(domain, drift, A, z0)
    n, dt = check_grid(T, dt)
    M = check_count(M, "M")
    record_every = _record_every(n, record_every)
    if not isinstance(gamma, DriftPerturbation):
        gamma = DriftPerturbation.constant(gamma)
    shift = _shift(gamma, diffusion, n, dt)
    key = derive_key(seed, stream)
    obs = None if observed is None else np.asarray(observed, dtype=int)
    run = _pick_engine(engine, drift, shift)
    parts = map_chunks(
        lambda s, c: run(domain, drift, diffusion, z0, n, dt, key, s, c, record_every, shift, obs, gronwall, True),
        M,
        chunk_size,
        workers,
    )
    X = _assemble([p[0] for p in parts], dt * record_every, seed, record_every == 1)
    Xp = _assemble([p[1] for p in parts], dt * record_every, seed, record_every == 1)
    return CoupledPair(
        X=X,
        Xp=Xp,
        sup_sq=np.concatenate([p[2] for p in parts]),
        sup_sq_full=np.concatenate([p[3] for p in parts]),
        sign_max=max(p[4] for p in parts),
        sign_min=min(p[5] for p in parts),
        n_reflections=sum(p[6] for p in parts),
        gronwall_violations=sum(p[7] for p in parts),
        gronwall_points=M * (n + 1) if gronwall is not None else 0,
        gronwall_max_excess=max(p[8] for p in parts) if gronwall is not None else -np.inf,
    )


@dataclass(frozen=True)
class LipschitzReport:
    max_violation: float
    n_pairs: int


def one_sided_lipschitz_check(drift, domain, num_pairs, seed, T=1.0, radius=10.0):
    """Largest sampled value of ``(g(t,x)-g(t,y)).(x-y) - F(t)|x-y|^2``.

    Points are drawn uniformly from the box of half-width ``radius`` around
    the domain's witness point and projected into the domain.
    """
    F = drift.one_sided_bound
    if F is None:
        raise HypothesisError(f"drift {drift.label!r} has no one-sided Lipschitz bound")
    num_pairs = check_count(num_pairs, "num_pairs")
    rng = np.random.default_rng(seed)
    d = domain.dim
    t = rng.uniform(0.0, T, num_pairs)
    x = domain.witness + rng.uniform(-radius, radius, (num_pairs, d))
    y = domain.witness + rng.uniform(-radius, radius, (num_pairs, d))
    domain.project_rows(x)
    domain.project_rows(y)
    diff = x - y
    if drift.time_homogeneous:
        lhs = np.sum((drift(0.0, x) - drift(0.0, y)) * diff, axis=1)
    else:
        lhs = np.array([(drift(ti, x[i : i + 1]) - drift(ti, y[i : i + 1]))[0] @ diff[i] for i, ti in enumerate(t)])
    rhs = F(t) * np.sum(diff * diff, axis=1)
    worst = float(np.max(lhs - rhs))
    return LipschitzReport(max_violation=worst, n_pairs=num_pairs)


def gronwall_bound(gamma, F, times, A=None):
    """``B(t) = int_0^t |sqrt(A) gamma(s)| exp(int_s^t F) ds`` on a grid.

    Evaluated interval by interval with 16-point Gauss-Legendre quadrature
    (exact for constant data).
    """
    F = as_bound(F)
    root = None if A is None or A.is_identity else A.sqrt
    times = np.asarray(times, dtype=float)
    if gamma.is_zero:
        return np.zeros_like(times)
    if gamma.constant_value is not None and F.kind == "constant":
        g = np.linalg.norm(gamma.constant_value if root is None else gamma.constant_value @ root)
        if F.value == 0:
            return g * times
        return g * np.expm1(F.value * times) / F.value
    phi = np.array([F.integral(0.0, t) for t in times])
    nodes, weights = np.polynomial.legendre.leggauss(16)
    out = np.zeros_like(times)
    acc = 0.0
    for j in range(1, len(times)):
        a, b = times[j - 1], times[j]
        s = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        g = gamma.values(s)
        if root is not None:
            g = g @ root
        ng = np.linalg.norm(g, axis=1)
        ph = np.array([phi[j - 1] + F.integral(a, si) for si in s])
        acc += 0.5 * (b - a) * float(weights @ (ng * np.exp(-ph)))
        out[j] = np.exp(phi[j]) * acc
    return out


def gronwall_slack_constant(gamma, F, T, A=None):
    """``5 (1 + sup|sqrt(A) gamma|) exp(int_0^T |F|)``."""
    F = as_bound(F)
    g = gamma.sup_norm(T) * (1.0 if A is None else np.sqrt(A.opnorm))
    return 5.0 * (1.0 + g) * np.exp(F.abs_integral(0.0, T))


@dataclass(frozen=True)
class GronwallReport:
    fraction_violating: float
    max_excess: float
    slack: float
    n_points: int


def pathwise_gronwall_check(X, Xp, gamma, F, A=None, slack_constant=None):
    """Compare ``|X(t) - Xp(t)|`` with its integral bound on the sampling grid.

    A point violates when it exceeds the bound by more than
    ``slack_constant * sqrt(dt)``; ``max_excess`` is the largest raw excess.
    """
    if not gamma.deterministic:
        raise ConfigError("the pathwise bound needs a deterministic perturbation")
    if isinstance(X, ReflectedPath):
        X, Xp = X.path, Xp.path
    if X.values.shape != Xp.values.shape or X.dt != Xp.dt:
        raise ConfigError("coupled paths must share the grid")
    if A is not None and not isinstance(A, DiffusionMatrix):
        A = DiffusionMatrix(A)
    bound = gronwall_bound(gamma, F, X.times, A)
    c = gronwall_slack_constant(gamma, F, X.T, A) if slack_constant is None else slack_constant
    slack = c * np.sqrt(X.dt)
    y = np.linalg.norm(X.values - Xp.values, axis=2)
    excess = y - bound[None, :]
    return GronwallReport(
        fraction_violating=float(np.mean(excess > slack)),
        max_excess=float(excess.max()),
        slack=float(slack),
        n_points=int(excess.size),
    )


class ReflectedDiffusion(BaseEstimator):
    """Estimator-style wrapper around :func:`simulate_reflected` and the coupled pair."""

    def __init__(self, domain=None, drift=None, diffusion=None, dt=1e-3, record_every=1, chunk_size=DEFAULT_CHUNK):
        self.domain = domain
        self.drift = drift
        self.diffusion = diffusion
        self.dt = dt
        self.record_every = record_every
        self.chunk_size = chunk_size

    def _parts(self):
        d = self.domain.dim
        drift = DriftField.constant(np.zeros(d)) if self.drift is None else self.drift
        A = DiffusionMatrix.identity(d) if self.diffusion is None else self.diffusion
        return drift, A

    def sample(self, z0, T, n_paths, seed, stream=0):
        drift, A = self._parts()
        return simulate_reflected(
            self.domain, drift, A, z0, T, self.dt, n_paths, seed, stream, self.record_every, self.chunk_size
        )

    def sample_coupled(self, z0, gamma, T, n_paths, seed, stream=0):
        drift, A = self._parts()
        return simulate_coupled_pair(
            self.domain, drift, A, z0, gamma, T, self.dt, n_paths, seed, stream, self.record_every,
            chunk_size=self.chunk_size,
        )

    def project(self, X):
        """Project rows of ``X`` onto the domain (copy)."""
        X = check_rows(X, self.domain.dim, "X").copy()
        return self.domain.project_rows(X)[0]
