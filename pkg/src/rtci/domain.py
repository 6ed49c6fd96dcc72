"""Convex polyhedral domains.

A domain is an intersection of closed half-spaces ``{x : n_i . x >= b_i}``
with unit inward normals ``n_i``. The module provides membership tests,
exact Euclidean projection (pool-adjacent-violators for the ordered wedge,
Dykstra's algorithm followed by an active-set polish otherwise) and the
inward normal cone at boundary points.
"""

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import ConfigError, NumericalError, check_count, check_rows, check_vector

#: Dykstra iteration cap and displacement-change stopping threshold.
DYKSTRA_MAX_ITER = 100_000
DYKSTRA_TOL = 1e-12


def active_tolerance(x):
    """Scale-aware tightness threshold for deciding that a face is active."""
    return 1e-8 * (1.0 + float(np.linalg.norm(x)))


@dataclass(frozen=True)
class HalfSpace:
    """The closed half-space ``{x : normal . x >= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = check_vector(self.normal, name="normal").copy()
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ConfigError(f"half-space normal must be a unit vector, got norm {np.linalg.norm(n)!r}")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_raw(cls, a, b):
        """Build ``{x : a . x >= b}`` for a non-unit ``a`` by rescaling."""
        a = check_vector(a, name="normal")
        norm = np.linalg.norm(a)
        if norm == 0:
            raise ConfigError("half-space normal must be nonzero")
        return cls(a / norm, float(b) / norm)


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    displacement: float
    active_faces: tuple


@dataclass(frozen=True, eq=False)
class PolyhedralDomain:
    """Intersection of half-spaces in ``R^dim``.

    Parameters
    ----------
    dim : int
    faces : sequence of HalfSpace
        An empty sequence describes the whole space.
    label : str
        Free-form tag. The label ``"wedge"`` selects the isotonic projector,
        so only :func:`wedge` should use it.
    witness : array, optional
        A point of the domain. Found by linear programming when omitted.
    check_essential : bool
        Reject faces that can be dropped without changing the set.
    """

    dim: int
    faces: tuple
    label: str = ""
    witness: np.ndarray = None
    check_essential: bool = True
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dim = check_count(self.dim, "dim")
        faces = tuple(self.faces)
        for f in faces:
            if not isinstance(f, HalfSpace) or f.normal.shape[0] != dim:
                raise ConfigError(f"every face must be a HalfSpace in R^{dim}")
        normals = np.array([f.normal for f in faces], dtype=float).reshape(len(faces), dim)
        offsets = np.array([f.offset for f in faces], dtype=float)
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

        if self.witness is None:
            witness = self._find_witness()
        else:
            witness = check_vector(self.witness, dim, "witness").copy()
            if not contains(self, witness, tol=1e-12 * (1 + np.abs(witness).max())):
                raise ConfigError("witness point violates a face constraint")
        witness.setflags(write=False)
        object.__setattr__(self, "witness", witness)
        if self.check_essential:
            for i in range(len(faces)):
                if not self._is_essential(i):
                    raise ConfigError(f"face {i} of domain {self.label!r} is redundant")

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def is_wedge(self):
        return self.label == "wedge"

    def _find_witness(self):
        m, d = self.normals.shape
        if m == 0:
            return np.zeros(d)
        # maximize s subject to n_i . x - s >= b_i, s <= 1
        c = np.zeros(d + 1)
        c[-1] = -1.0
        a_ub = np.hstack([-self.normals, np.ones((m, 1))])
        res = linprog(c, A_ub=a_ub, b_ub=-self.offsets, bounds=[(None, None)] * d + [(None, 1.0)], method="highs")
        if res.status != 0 or res.x[-1] < -1e-9:
            raise ConfigError(f"domain {self.label!r} is empty")
        return res.x[:d]

    def _is_essential(self, i):
        keep = np.arange(self.n_faces) != i
        res = linprog(
            self.normals[i],
            A_ub=-self.normals[keep],
            b_ub=-self.offsets[keep],
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        if res.status == 3:  # unbounded
            return True
        return res.status == 0 and res.fun < self.offsets[i] - 1e-9 * (1 + abs(self.offsets[i]))

    def slacks(self, x):
        """Constraint slacks ``n_i . x - b_i``; nonnegative inside."""
        return x @ self.normals.T - self.offsets

    def active_faces(self, x):
        x = check_vector(x, self.dim)
        return tuple(np.flatnonzero(np.abs(self.slacks(x)) <= active_tolerance(x)).tolist())

    def project_rows(self, x):
        """Project each row of ``x`` in place.

        Returns the per-row displacement norms. Rows already inside the
        domain are left bit-for-bit unchanged.
        """
        x = np.ascontiguousarray(x, dtype=float)
        disp = np.zeros(x.shape[0])
        if self.n_faces == 0:
            return x, disp
        if self.is_wedge:
            out = np.flatnonzero(np.any(x[:, 1:] < x[:, :-1], axis=1))
        else:
            out = np.flatnonzero(np.any(x @ self.normals.T < self.offsets, axis=1))
        if out.size == 0:
            return x, disp
        sub = x[out]
        dsub = np.zeros(out.size)
        if self.is_wedge:
            _pava_rows(sub, dsub)
        else:
            status = _dykstra_rows(sub, dsub, self.normals, self.offsets, DYKSTRA_MAX_ITER, DYKSTRA_TOL)
            if status != 0:
                raise NumericalError(
                    f"projection onto {self.label!r} did not converge in {DYKSTRA_MAX_ITER} iterations"
                )
        x[out] = sub
        disp[out] = dsub
        return x, disp


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, nogil=True)
def pava_row(row, sums, counts):
    """Isotonic (nondecreasing) projection of ``row`` in place; returns the displacement."""
    n = row.shape[0]
    ordered = True
    for k in range(n - 1):
        if row[k] > row[k + 1]:
            ordered = False
            break
    if ordered:
        return 0.0
    nb_ = 0
    for k in range(n):
        sums[nb_] = row[k]
        counts[nb_] = 1
        nb_ += 1
        while nb_ > 1 and sums[nb_ - 2] / counts[nb_ - 2] > sums[nb_ - 1] / counts[nb_ - 1]:
            sums[nb_ - 2] += sums[nb_ - 1]
            counts[nb_ - 2] += counts[nb_ - 1]
            nb_ -= 1
    acc = 0.0
    k = 0
    for b in range(nb_):
        mean = sums[b] / counts[b]
        for _ in range(counts[b]):
            diff = row[k] - mean
            acc += diff * diff
            row[k] = mean
            k += 1
    return np.sqrt(acc)


@nb.njit(cache=True, nogil=True)
def wedge_push_dot(hat, y, d, disp):
    """``u . d`` for the unit push ``u = (y - hat) / disp`` of a wedge projection.

    The push is rebuilt from its face multipliers ``lam_k = sum_{i<=k} (hat_i - y_i)``
    on the faces ``y_k = y_{k+1}`` where ``y`` sits, so that rounding in the
    block means is not divided by a small ``disp``.
    """
    lam = 0.0
    acc = 0.0
    for k in range(y.shape[0] - 1):
        lam += hat[k] - y[k]
        if y[k] == y[k + 1]:
            acc += lam * (d[k + 1] - d[k])
    return acc / disp


@nb.njit(cache=True, nogil=True)
def _pava_rows(x, disp):
    n = x.shape[1]
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    for r in range(x.shape[0]):
        disp[r] = pava_row(x[r], sums, counts)


@nb.njit(cache=True, nogil=True)
def _solve_inplace(a, rhs, n):
    # Gaussian elimination with partial pivoting; False when singular
    for c in range(n):
        piv = c
        for r in range(c + 1, n):
            if abs(a[r, c]) > abs(a[piv, c]):
                piv = r
        if abs(a[piv, c]) < 1e-12:
            return False
        if piv != c:
            for k in range(n):
                a[c, k], a[piv, k] = a[piv, k], a[c, k]
            rhs[c], rhs[piv] = rhs[piv], rhs[c]
        for r in range(c + 1, n):
            f = a[r, c] / a[c, c]
            for k in range(c, n):
                a[r, k] -= f * a[c, k]
            rhs[r] -= f * rhs[c]
    for c in range(n - 1, -1, -1):
        acc = rhs[c]
        for k in range(c + 1, n):
            acc -= a[c, k] * rhs[k]
        rhs[c] = acc / a[c, c]
    return True


@nb.njit(cache=True, nogil=True)
def _polish(x, z, normals, offsets):
    # exact projection onto the face set that Dykstra found active
    m, d = normals.shape
    scale = 1.0
    for j in range(d):
        scale = max(scale, abs(x[j]))
    tol = 1e-8 * scale
    idx = np.empty(m, dtype=np.int64)
    na = 0
    for i in range(m):
        s = -offsets[i]
        for j in range(d):
            s += normals[i, j] * z[j]
        if s <= tol:
            idx[na] = i
            na += 1
    if na == 0:
        return False
    nmat = np.empty((na, d))
    rhs = np.empty(na)
    for a in range(na):
        i = idx[a]
        r = offsets[i]
        for j in range(d):
            nmat[a, j] = normals[i, j]
            r -= normals[i, j] * x[j]
        rhs[a] = r
    gram = nmat @ nmat.T
    if not _solve_inplace(gram, rhs, na):
        return False
    mu = rhs
    for a in range(na):
        if mu[a] < -1e-12:
            return False
    cand = x + nmat.T @ mu
    for i in range(m):
        s = -offsets[i]
        for j in range(d):
            s += normals[i, j] * cand[j]
        if s < -1e-12 * scale:
            return False
    for j in range(d):
        z[j] = cand[j]
    return True


@nb.njit(cache=True, nogil=True)
def dykstra_row(row, normals, offsets, max_iter, tol, incr, z, y):
    """Project ``row`` in place; returns the displacement, or -1.0 without convergence."""
    m, d = normals.shape
    inside = True
    for i in range(m):
        s = -offsets[i]
        for j in range(d):
            s += normals[i, j] * row[j]
        if s < 0.0:
            inside = False
            break
    if inside:
        return 0.0
    scale = 1.0
    for j in range(d):
        scale = max(scale, abs(row[j]))
    incr[:, :] = 0.0
    z[:] = row
    converged = False
    for _ in range(max_iter):
        change = 0.0
        for i in range(m):
            s = -offsets[i]
            for j in range(d):
                y[j] = z[j] + incr[i, j]
                s += normals[i, j] * y[j]
            for j in range(d):
                p = y[j] - s * normals[i, j] if s < 0.0 else y[j]
                incr[i, j] = y[j] - p
                change += (p - z[j]) ** 2
                z[j] = p
        if np.sqrt(change) <= tol * scale:
            converged = True
            break
    if not converged:
        return -1.0
    _polish(row, z, normals, offsets)
    acc = 0.0
    for j in range(d):
        acc += (row[j] - z[j]) ** 2
        row[j] = z[j]
    return np.sqrt(acc)


@nb.njit(cache=True, nogil=True)
def _dykstra_rows(x, disp, normals, offsets, max_iter, tol):
    m, d = normals.shape
    incr = np.zeros((m, d))
    z = np.empty(d)
    y = np.empty(d)
    for r in range(x.shape[0]):
        v = dykstra_row(x[r], normals, offsets, max_iter, tol, incr, z, y)
        if v < 0.0:
            return 1
        disp[r] = v
    return 0


# ---------------------------------------------------------------------------
# public operations


def contains(domain, x, tol=0.0):
    """True iff ``n_i . x >= b_i - tol`` for every face."""
    x = check_vector(x, domain.dim)
    if tol < 0:
        raise ConfigError("tol must be nonnegative")
    return bool(np.all(domain.slacks(x) >= -tol))


def project(domain, x):
    """Euclidean projection of ``x`` onto ``domain``."""
    x = check_vector(x, domain.dim)
    p, disp = domain.project_rows(x[None, :].copy())
    point = p[0]
    return ProjectionResult(point=point, displacement=float(disp[0]), active_faces=domain.active_faces(point))


def normal_cone_direction(domain, x, weights, return_coefficients=False):
    """Inward unit normal at boundary point ``x`` built from face weights.

    ``weights`` maps face index to a nonnegative weight (a dict, or an array
    over all faces). The weights are rescaled to coefficients ``alpha`` with
    ``sum(alpha**2) == 1``; the returned vector is ``sum(alpha_i n_i)``
    normalized to unit length. Only its direction enters a reflection term.
    """
    x = check_vector(x, domain.dim)
    active = domain.active_faces(x)
    if not active:
        raise ConfigError("x is not on the boundary of the domain")
    if isinstance(weights, dict):
        w = np.zeros(domain.n_faces)
        for i, v in weights.items():
            if not 0 <= int(i) < domain.n_faces:
                raise ConfigError(f"face index {i} out of range")
            w[int(i)] = v
    else:
        w = check_vector(weights, domain.n_faces, "weights")
    if np.any(w < 0):
        raise ConfigError("weights must be nonnegative")
    inactive = np.setdiff1d(np.arange(domain.n_faces), active)
    if np.any(w[inactive] != 0):
        raise ConfigError("weights must be supported on faces active at x")
    if not np.any(w > 0):
        raise ConfigError("weights are all zero")
    alpha = w / np.linalg.norm(w)
    v = alpha @ domain.normals
    y = v / np.linalg.norm(v)
    if return_coefficients:
        return y, alpha
    return y


def wedge(N):
    """The ordered wedge ``{y_1 <= y_2 <= ... <= y_N}``."""
    N = check_count(N, "N", minimum=2)
    faces = []
    for k in range(N - 1):
        n = np.zeros(N)
        n[k], n[k + 1] = -1.0, 1.0
        faces.append(HalfSpace(n / np.sqrt(2.0), 0.0))
    return PolyhedralDomain(N, tuple(faces), label="wedge", witness=np.arange(1.0, N + 1), check_essential=False)


def whole_space(dim):
    return PolyhedralDomain(dim, (), label="whole-space")


def half_space(normal, offset=0.0, label="half-space"):
    face = HalfSpace.from_raw(normal, offset)
    return PolyhedralDomain(face.normal.shape[0], (face,), label=label)


def half_line():
    """``[0, inf)`` in one dimension."""
    return half_space([1.0], 0.0, label="half-line")


def box(lower, upper):
    """Axis-aligned box ``lower <= x <= upper``."""
    lower = check_vector(lower, name="lower")
    upper = check_vector(upper, lower.shape[0], "upper")
    if np.any(upper <= lower):
        raise ConfigError("box needs lower < upper in every coordinate")
    d = lower.shape[0]
    faces = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        faces.append(HalfSpace(e, lower[k]))
        faces.append(HalfSpace(-e, -upper[k]))
    return PolyhedralDomain(d, tuple(faces), label="box", witness=(lower + upper) / 2)


def from_halfspaces(normals, offsets, label="polyhedron", check_essential=True):
    """Domain ``{x : a_i . x >= b_i}`` from raw (not necessarily unit) normals."""
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    offsets = np.asarray(offsets, dtype=float).reshape(-1)
    if normals.shape[0] != offsets.shape[0]:
        raise ConfigError("normals and offsets must have the same number of rows")
    faces = tuple(HalfSpace.from_raw(a, b) for a, b in zip(normals, offsets))
    return PolyhedralDomain(normals.shape[1], faces, label=label, check_essential=check_essential)


class DomainProjector(TransformerMixin, BaseEstimator):
    """Transformer that maps each row of ``X`` to its projection onto ``domain``.

    For ``wedge(N)`` this is row-wise isotonic regression.
    """

    def __init__(self, domain=None):
        self.domain = domain

    def fit(self, X, y=None):
        if not isinstance(self.domain, PolyhedralDomain):
            raise ConfigError("DomainProjector needs a PolyhedralDomain")
        check_rows(X, self.domain.dim, "X")
        self.n_features_in_ = self.domain.dim
        return self

    def transform(self, X):
        if not hasattr(self, "n_features_in_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("DomainProjector is not fitted")
        X = check_rows(X, self.n_features_in_, "X").copy()
        out, self.displacement_ = self.domain.project_rows(X)
        return out
