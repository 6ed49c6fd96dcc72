"""Sampled path bundles and their binary file format.

Layout (all little-endian)::

    b"RTCI"  u32 version  u64 dim  u64 n_steps  u64 n_paths  f64 dt  u64 seed
    n_paths * (n_steps + 1) * dim  f64 values   (path-major, then time, then coordinate)

followed by zero or more tagged sections ``tag[4] u64 count f64[count]``.
Reflected paths carry their local time in a ``b"LOCT"`` section.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .validation import ConfigError

MAGIC = b"RTCI"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQdQ")
_SECTION = struct.Struct("<4sQ")


class BundleFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PathBundle:
    """``n_paths`` sampled paths in ``R^dim`` on the grid ``t_j = j * dt``."""

    values: np.ndarray
    dt: float
    seed: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ConfigError(f"bundle values must have shape (paths, times, dim), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("bundle contains non-finite values")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1] - 1

    @property
    def dim(self):
        return self.values.shape[2]

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def coordinates(self, idx):
        """Bundle restricted to the coordinates ``idx``."""
        return PathBundle(self.values[:, :, idx], self.dt, self.seed)


def write_bundle(path, bundle, sections=None):
    """Write ``bundle`` and optional ``{tag: array}`` sections to ``path``."""
    header = _HEADER.pack(
        MAGIC, VERSION, bundle.dim, bundle.n_steps, bundle.n_paths, bundle.dt, int(bundle.seed) & 0xFFFFFFFFFFFFFFFF
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bundle.values, dtype="<f8").tobytes())
        for tag, arr in (sections or {}).items():
            tag = tag.encode("ascii") if isinstance(tag, str) else tag
            if len(tag) != 4:
                raise ConfigError(f"section tag must be 4 bytes, got {tag!r}")
            arr = np.ascontiguousarray(arr, dtype="<f8").ravel()
            fh.write(_SECTION.pack(tag, arr.size))
            fh.write(arr.tobytes())


def read_bundle(path):
    """Read a bundle file; returns ``(PathBundle, {tag: flat array})``.

    Raises BundleFormatError on a wrong magic number, unknown version, or
    truncated data. Nothing is returned from a partially valid file.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise BundleFormatError("file too short for an RTCI header")
    magic, version, dim, n, m, dt, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BundleFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BundleFormatError(f"unsupported version {version}")
    count = m * (n + 1) * dim
    off = _HEADER.size
    end = off + 8 * count
    if len(data) < end:
        raise BundleFormatError("truncated path data")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(m, n + 1, dim).astype(float)
    sections = {}
    off = end
    while off < len(data):
        if len(data) - off < _SECTION.size:
            raise BundleFormatError("truncated section header")
        tag, size = _SECTION.unpack_from(data, off)
        off += _SECTION.size
        if len(data) - off < 8 * size:
            raise BundleFormatError(f"truncated section {tag!r}")
        sections[tag.decode("ascii")] = np.frombuffer(data, dtype="<f8", count=size, offset=off).copy()
        off += 8 * size
    if "LOCT" in sections and sections["LOCT"].size != m * (n + 1):
        raise BundleFormatError("local-time section does not match the bundle shape")
    return PathBundle(values, dt, seed), sections
