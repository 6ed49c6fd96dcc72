"""Input validation helpers shared by the simulators and solvers."""

import math

import numpy as np


class ConfigError(ValueError):
    """Invalid user input: bad shapes, grids, or parameter values."""


class HypothesisError(ValueError):
    """A theorem hypothesis required by the requested computation fails."""


class NumericalError(RuntimeError):
    """An iterative numerical routine did not converge."""


def check_vector(x, dim=None, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ConfigError(f"{name} has dimension {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise ConfigError(f"{name} contains non-finite values")
    return x


def check_rows(x, dim, name="x"):
    """Coerce to a 2-d float array of shape ``(m, dim)``; 1-d input becomes one row."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ConfigError(f"{name} must have trailing dimension {dim}, got shape {x.shape}")
    return x


def check_positive(value, name, strict=True):
    value = float(value)
    if not math.isfinite(value) or value < 0 or (strict and value == 0):
        raise ConfigError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return value


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_grid(T, dt):
    """Return ``(n_steps, dt)`` for a uniform grid on ``[0, T]``.

    ``T / dt`` must be an integer to within 1e-9. The returned step is
    ``T / n_steps`` so that the last grid time equals ``T``.
    """
    T = check_positive(T, "T")
    dt = check_positive(dt, "dt")
    ratio = T / dt
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"T/dt = {ratio!r} is not an integer")
    return n, T / n


def check_symmetric_pd(a, name="A"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ConfigError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise ConfigError(f"{name} is not positive definite")
    return a
