"""Competing Brownian particles.

Particle ``i`` moves with drift ``g_k`` and volatility ``sigma_k`` where
``k`` is its current rank (ties broken by particle index). Systems are
simulated by Euler-Maruyama with ranks frozen over each step.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance
from sklearn.base import BaseEstimator

from ._kernels import named_paths
from ._parallel import DEFAULT_CHUNK, map_chunks
from ._rng import derive_key, normals
from .bundle import PathBundle
from .validation import ConfigError, HypothesisError, check_count, check_grid, check_vector

#: Target number of normals generated per noise block.
_NOISE_BLOCK = 1 << 21


@dataclass(frozen=True, eq=False)
class RankCoefficients:
    """Per-rank drifts and volatilities.

    With ``tail=True`` the last entries are repeated for every rank beyond
    ``n0 = len(g)``, which describes an infinite system.
    """

    g: np.ndarray
    sigma: np.ndarray
    tail: bool = False

    def __post_init__(self):
        g = check_vector(self.g, name="g")
        sigma = check_vector(self.sigma, g.shape[0], "sigma")
        if np.any(sigma <= 0):
            raise ConfigError("all volatilities sigma_k must be positive")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def atlas(cls, N=None, drift=1.0):
        """Atlas model: only the lowest-ranked particle has drift ``drift``.

        ``N=None`` gives the infinite Atlas model (tail of zero drifts).
        """
        n = 2 if N is None else check_count(N, "N")
        g = np.zeros(n)
        g[0] = drift
        return cls(g, np.ones(n), tail=N is None)

    @property
    def n0(self):
        return self.g.shape[0]

    def _extend(self, values, N):
        N = check_count(N, "N")
        if N <= self.n0:
            return values[:N].copy()
        if not self.tail:
            raise ConfigError(f"coefficients cover {self.n0} ranks but N = {N} and no tail is specified")
        return np.concatenate([values, np.full(N - self.n0, values[-1])])

    def drifts(self, N):
        return self._extend(self.g, N)

    def sigmas(self, N):
        return self._extend(self.sigma, N)

    @property
    def sup_sigma2(self):
        return float(np.max(self.sigma**2))


@dataclass(frozen=True)
class Permutation:
    """Ranking permutation, zero-based.

    ``forward[k]`` is the name (index) of the particle with rank ``k``;
    ``inverse[i]`` is the rank of particle ``i``.
    """

    forward: np.ndarray
    inverse: np.ndarray


@dataclass(frozen=True)
class CoefficientReport:
    strong_uniqueness: bool
    nonincreasing_drifts: bool


@dataclass(frozen=True, eq=False)
class RankedBundle:
    ranked: PathBundle
    gaps: PathBundle
    localtime: np.ndarray


@dataclass(frozen=True)
class TruncationDiagnostic:
    """Doubling-N comparison of the first-k terminal marginals."""

    N: int
    w1: np.ndarray
    noise_floor: np.ndarray
    consistent: bool


def ranking_permutation(x):
    x = check_vector(x)
    forward = np.argsort(x, kind="stable")
    inverse = np.empty_like(forward)
    inverse[forward] = np.arange(forward.shape[0])
    return Permutation(forward, inverse)


def _ranks(x):
    # row-wise ranks of an (m, N) array, stable in the particle index
    order = np.argsort(x, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(x.shape[1])[None, :], axis=1)
    return ranks


def rank_drift(g, x):
    """Named drift vector ``g_{rank(i)}`` for each row of ``x``."""
    return np.asarray(g)[_ranks(np.atleast_2d(x))]


def validate_coefficients(c, N=None):
    """Check the concavity condition on ``sigma**2`` and monotonicity of ``g``.

    ``N`` truncates (or, with a tail, extends) the coefficient list first.
    """
    N = c.n0 + (1 if c.tail else 0) if N is None else N
    s2 = c.sigmas(N) ** 2
    g = c.drifts(N)
    strong = bool(np.all(s2[1:-1] >= 0.5 * (s2[:-2] + s2[2:]))) if N > 2 else True
    return CoefficientReport(strong_uniqueness=strong, nonincreasing_drifts=bool(np.all(np.diff(g) <= 0)))


def _noise_block(count, dim, n_steps):
    return max(1, min(n_steps, _NOISE_BLOCK // max(1, count * dim)))


def _named_chunk(g, sigma, x0, n, dt, key, start, count, record_every):
    N = x0.shape[0]
    x = np.repeat(x0[None, :], count, axis=0)
    out = np.empty((count, n // record_every + 1, N))
    out[:, 0] = x
    sq = np.sqrt(dt)
    block = _noise_block(count, N, n)
    for j0 in range(0, n, block):
        b = min(block, n - j0)
        xi = normals(key, start, count, j0, b, N)
        for s in range(b):
            ranks = _ranks(x)
            x = x + g[ranks] * dt + sigma[ranks] * sq * xi[:, s]
            j = j0 + s + 1
            if j % record_every == 0:
                out[:, j // record_every] = x
    return out


def _named_fused(g, sigma, x0, n, dt, key, start, count, record_every):
    out = np.empty((count, n // record_every + 1, x0.shape[0]))
    named_paths(g, sigma, x0, n, dt, np.uint32(key & 0xFFFFFFFF), np.uint32(key >> 32), start, count, record_every, out)
    return out


def _check_record(n, record_every):
    record_every = check_count(record_every, "record_every")
    if n % record_every:
        raise ConfigError(f"record_every={record_every} must divide the number of steps {n}")
    return record_every


def simulate_named(
    c, N, x0, T, dt, M, seed, stream=0, record_every=1, chunk_size=DEFAULT_CHUNK, workers=None, engine="fused"
):
    """Euler-Maruyama paths of the named particles ``X_1..X_N``.

    Returns a PathBundle with ``M`` paths. Path ``i`` uses the noise stream
    ``(seed, stream, i)`` so any chunking gives identical output.
    ``engine="array"`` selects the vectorized reference loop.
    """
    N = check_count(N, "N")
    x0 = check_vector(x0, N, "x0")
    n, dt = check_grid(T, dt)
    M = check_count(M, "M")
    record_every = _check_record(n, record_every)
    g, sigma = c.drifts(N), c.sigmas(N)
    key = derive_key(seed, stream)
    if engine not in ("fused", "array"):
        raise ConfigError(f"engine must be 'fused' or 'array', got {engine!r}")
    run = _named_fused if engine == "fused" else _named_chunk
    parts = map_chunks(lambda s, k: run(g, sigma, x0, n, dt, key, s, k, record_every), M, chunk_size, workers)
    return PathBundle(np.concatenate(parts), dt * record_every, seed)


def ranked_from_named(paths):
    """Ranked positions, gaps and collision local times of a named bundle.

    The local time of the pair ``(k, k+1)`` grows by ``max(0, -z)`` over a
    step, where ``z`` is the gap the two particles would have if they kept
    the ranks held at the start of the step.
    """
    x = paths.values
    y = np.sort(x, axis=2)
    gaps = np.diff(y, axis=2)
    m, n1, N = x.shape
    lt = np.zeros((m, n1, max(N - 1, 0)))
    if N > 1 and n1 > 1:
        order = np.argsort(x[:, :-1], axis=2, kind="stable")
        carried = np.take_along_axis(x[:, 1:], order, axis=2)
        push = np.maximum(0.0, -np.diff(carried, axis=2))
        lt[:, 1:] = np.cumsum(push, axis=1)
    return RankedBundle(
        ranked=PathBundle(y, paths.dt, paths.seed),
        gaps=PathBundle(gaps.reshape(m, n1, max(N - 1, 0)), paths.dt, paths.seed),
        localtime=lt,
    )


# ---------------------------------------------------------------------------
# infinite systems


class LinearSpacing:
    """Initial positions ``x_n = delta * (n - 1)``."""

    def __init__(self, delta=1.0):
        self.delta = float(delta)

    def __call__(self, n):
        return self.delta * (np.asarray(n, dtype=float) - 1.0)

    def __repr__(self):
        return f"LinearSpacing(delta={self.delta})"


class ConstantPositions:
    """All particles at ``value``. Fails the initial-condition probe."""

    def __init__(self, value=0.0):
        self.value = float(value)

    def __call__(self, n):
        return np.full(np.shape(n), self.value)


def check_initial_rule(rule, n_max=10**6, alphas=(0.01, 1.0)):
    """Probe that ``x_n -> inf`` and ``sum exp(-alpha x_n^2) < inf``.

    Growth: minima over the decades ``[10^3,10^4)``, ``[10^4,10^5)``,
    ``[10^5,10^6]`` must strictly increase. Summability: the partial sums up
    to ``10^5`` and ``10^6`` must agree to 1e-8 relative.
    """
    n = np.arange(1, n_max + 1)
    x = np.asarray(rule(n), dtype=float)
    if x.shape != n.shape or not np.all(np.isfinite(x)):
        raise HypothesisError("initial-condition rule must return finite positions")
    decades = [x[10**3 - 1 : 10**4 - 1].min(), x[10**4 - 1 : 10**5 - 1].min(), x[10**5 - 1 :].min()]
    if not (decades[0] < decades[1] < decades[2]):
        raise HypothesisError("initial positions do not tend to infinity")
    for a in alphas:
        terms = np.exp(-a * x**2)
        s5, s6 = terms[: 10**5].sum(), terms.sum()
        if s6 - s5 > 1e-8 * max(1.0, s6):
            raise HypothesisError(f"sum of exp(-{a} x_n^2) does not converge")
    return True


def simulate_truncated_infinite(
    c, k, N, x0_rule, T, dt, M, seed, kind="ranked", stream=0, record_every=1, chunk_size=DEFAULT_CHUNK, workers=None
):
    """First ``k`` coordinates of the ``N``-particle truncation of an infinite system.

    ``kind`` selects named (``X_1..X_k``) or ranked (``Y_1..Y_k``) coordinates.
    """
    if not c.tail:
        raise ConfigError("an infinite system needs tail-constant coefficients")
    k = check_count(k, "k")
    N = check_count(N, "N")
    if k > N:
        raise ConfigError(f"k = {k} exceeds N = {N}")
    if kind not in ("named", "ranked"):
        raise ConfigError(f"kind must be 'named' or 'ranked', got {kind!r}")
    check_initial_rule(x0_rule)
    x0 = np.asarray(x0_rule(np.arange(1, N + 1)), dtype=float)
    paths = simulate_named(c, N, x0, T, dt, M, seed, stream, record_every, chunk_size, workers)
    v = paths.values
    if kind == "ranked":
        v = np.sort(v, axis=2)
    return PathBundle(v[:, :, :k], paths.dt, paths.seed)


def truncation_diagnostic(c, k, N, x0_rule, T, dt, M, seed, kind="ranked", workers=None):
    """Compare first-``k`` terminal marginals at ``N`` and ``2N`` particles.

    The noise floor is the distance between two independent replicas at
    ``N``; the comparison is consistent when every coordinate's distance is
    within three times its floor.
    """
    run = lambda n_, stream: simulate_truncated_infinite(  # noqa: E731
        c, k, n_, x0_rule, T, dt, M, seed, kind, stream=stream, record_every=check_grid(T, dt)[0], workers=workers
    ).values[:, -1, :]
    a, b, a2 = run(N, 1), run(2 * N, 2), run(N, 3)
    w1 = np.array([wasserstein_distance(a[:, j], b[:, j]) for j in range(k)])
    floor = np.array([wasserstein_distance(a[:, j], a2[:, j]) for j in range(k)])
    return TruncationDiagnostic(N=N, w1=w1, noise_floor=floor, consistent=bool(np.all(w1 <= 3 * floor)))


def rearrangement_gap(g, x, y):
    """``(g(x) - g(y)) . (x - y)`` for the rank-based drift ``g(x)_i = g_{rank_x(i)}``.

    Nonpositive whenever ``g`` is nonincreasing.
    """
    g = check_vector(g, name="g")
    x = check_vector(x, g.shape[0], "x")
    y = check_vector(y, g.shape[0], "y")
    gx = g[ranking_permutation(x).inverse]
    gy = g[ranking_permutation(y).inverse]
    return float((gx - gy) @ (x - y))


class CompetingParticles(BaseEstimator):
    """Estimator-style front end for named and ranked particle simulation."""

    def __init__(self, g=None, sigma=None, tail=False, dt=1e-3, record_every=1, chunk_size=DEFAULT_CHUNK):
        self.g = g
        self.sigma = sigma
        self.tail = tail
        self.dt = dt
        self.record_every = record_every
        self.chunk_size = chunk_size

    @property
    def coefficients(self):
        return RankCoefficients(self.g, self.sigma if self.sigma is not None else np.ones(len(self.g)), self.tail)

    def sample(self, x0, T, n_paths, seed, stream=0):
        x0 = np.asarray(x0, dtype=float)
        return simulate_named(
            self.coefficients, x0.shape[0], x0, T, self.dt, n_paths, seed, stream, self.record_every, self.chunk_size
        )

    def sample_ranked(self, x0, T, n_paths, seed, stream=0):
        return ranked_from_named(self.sample(x0, T, n_paths, seed, stream))
