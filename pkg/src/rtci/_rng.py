"""Counter-based Gaussian noise.

Every normal variate is a pure function of ``(key, path, step, coordinate)``,
computed with the Philox4x32-10 block cipher and a Box-Muller transform.
Simulations can therefore be split into arbitrary chunks of paths, run in any
order and by any number of workers, and still produce bit-identical output.
"""

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_TWO_PI = 2.0 * np.pi


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on one 128-bit counter block."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for r in range(10):
        p0 = _M0 * np.uint64(c0)
        p1 = _M1 * np.uint64(c2)
        hi0 = np.uint32(p0 >> np.uint64(32))
        lo0 = np.uint32(p0 & _MASK32)
        hi1 = np.uint32(p1 >> np.uint64(32))
        lo1 = np.uint32(p1 & _MASK32)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        if r < 9:
            k0 = np.uint32(k0 + _W0)
            k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def _unit(a, b):
    # 53-bit uniform on (0, 1]
    x = (np.uint64(a) >> np.uint64(5)) * np.uint64(67108864) + (np.uint64(b) >> np.uint64(6))
    return (np.float64(x) + 1.0) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, nogil=True)
def _fill_normals(out, key0, key1, path_start, step_start):
    n_paths, n_steps, dim = out.shape
    half = (dim + 1) // 2
    for i in range(n_paths):
        path = np.uint64(path_start + i)
        p_lo = np.uint32(path & _MASK32)
        p_hi = np.uint32(path >> np.uint64(32))
        for s in range(n_steps):
            base = np.uint64(step_start + s) * np.uint64(half)
            for q in range(half):
                j = base + np.uint64(q)
                r0, r1, r2, r3 = philox4x32(
                    np.uint32(j & _MASK32), np.uint32(j >> np.uint64(32)), p_lo, p_hi, key0, key1
                )
                u = _unit(r0, r1)
                v = _unit(r2, r3)
                rad = np.sqrt(-2.0 * np.log(u))
                out[i, s, 2 * q] = rad * np.cos(_TWO_PI * v)
                if 2 * q + 1 < dim:
                    out[i, s, 2 * q + 1] = rad * np.sin(_TWO_PI * v)


def derive_key(seed, *tags):
    """Map a user seed and integer stream tags to a 64-bit Philox key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def normals(key, path_start, n_paths, step_start, n_steps, dim):
    """Standard normals of shape ``(n_paths, n_steps, dim)``.

    Entry ``[i, s, c]`` depends only on ``key``, the global path index
    ``path_start + i``, the global step ``step_start + s`` and ``c``.
    """
    key = int(key)
    out = np.empty((n_paths, n_steps, dim))
    _fill_normals(out, np.uint32(key & 0xFFFFFFFF), np.uint32(key >> 32), int(path_start), int(step_start))
    return out
