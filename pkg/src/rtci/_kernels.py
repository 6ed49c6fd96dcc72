"""Fused per-path simulation loops for the built-in drift families.

These produce the same increments as the array engines (same Philox
counters) but keep each path in registers, which removes the per-step
Python overhead. Drift codes: 0 constant ``b``, 1 linear ``K x + b``,
2 rank-based ``g_{rank(i)}``.
"""

import numba as nb
import numpy as np

from ._rng import _MASK32, _TWO_PI, _unit, philox4x32
from .domain import DYKSTRA_MAX_ITER, DYKSTRA_TOL, dykstra_row, pava_row, wedge_push_dot

DRIFT_CONSTANT = 0
DRIFT_LINEAR = 1
DRIFT_RANK = 2

# stats slots
SIGN_MAX, SIGN_MIN, N_REFL, G_VIOL, G_MAX, STATUS = range(6)


# Hot loops below avoid passing arrays to helpers: every array argument costs
# a pair of reference-count updates per call.


@nb.njit(cache=True, nogil=True)
def _gauss_pair(key0, key1, p_lo, p_hi, j):
    r0, r1, r2, r3 = philox4x32(np.uint32(j & _MASK32), np.uint32(j >> np.uint64(32)), p_lo, p_hi, key0, key1)
    rad = np.sqrt(-2.0 * np.log(_unit(r0, r1)))
    v = _TWO_PI * _unit(r2, r3)
    return rad * np.cos(v), rad * np.sin(v)


@nb.njit(cache=True, nogil=True)
def reflected_paths(
    z0, n, dt, key0, key1, start, count,
    kind, dvec, dmat,
    normals, offsets, wedge, root, identity,
    shift, use_shift, pair, observed, bound, slack, use_bound,
    record_every, keep_normals,
    rec, lt_rec, nrm, recp, ltp_rec, nrmp, sup_sq, sup_full, stats,
):
    """Run ``count`` paths (and their unperturbed twins when ``pair``).

    Outputs are written into the preallocated arrays. ``stats`` collects the
    reflection-sign extremes, the reflection count, Gronwall counters and a
    status flag (1 if a projection failed to converge).
    """
    d = z0.shape[0]
    m = normals.shape[0]
    sq = np.sqrt(dt)
    copies = 2 if pair else 1
    xi = np.empty(d + 1)
    dw = np.empty(d)
    g = np.empty(d)
    x = np.empty((2, d))
    hat = np.empty((2, d))
    disp = np.zeros(2)
    lt = np.zeros(2)
    sums = np.empty(d)
    counts = np.empty(d, dtype=np.int64)
    incr = np.zeros((m, d))
    z = np.empty(d)
    tmp = np.empty(d)
    diff = np.empty(d)
    k0 = np.uint32(key0)
    k1 = np.uint32(key1)
    half = (d + 1) // 2
    for i in range(count):
        path = np.uint64(start + i)
        p_lo = np.uint32(path & _MASK32)
        p_hi = np.uint32(path >> np.uint64(32))
        for c in range(2):
            x[c] = z0
        lt[:] = 0.0
        rec[i, 0] = z0
        lt_rec[i, 0] = 0.0
        if pair:
            recp[i, 0] = z0
            ltp_rec[i, 0] = 0.0
        for j in range(n):
            base = np.uint64(j) * np.uint64(half)
            for q in range(half):
                xi[2 * q], xi[2 * q + 1] = _gauss_pair(k0, k1, p_lo, p_hi, base + np.uint64(q))
            if identity:
                for k in range(d):
                    dw[k] = xi[k] * sq
            else:
                for k in range(d):
                    acc = 0.0
                    for l in range(d):
                        acc += xi[l] * root[l, k]
                    dw[k] = acc * sq
            for c in range(copies):
                # drift at the current state
                if kind == DRIFT_CONSTANT:
                    for k in range(d):
                        g[k] = dvec[k]
                elif kind == DRIFT_LINEAR:
                    for k in range(d):
                        acc = 0.0
                        for l in range(d):
                            acc += dmat[k, l] * x[c, l]
                        g[k] = acc + dvec[k]
                else:
                    # stable rank: ties go to the smaller index
                    for a in range(d):
                        r = 0
                        for b in range(d):
                            if x[c, b] < x[c, a] or (x[c, b] == x[c, a] and b < a):
                                r += 1
                        g[a] = dvec[r]
                for k in range(d):
                    h = x[c, k] + g[k] * dt + dw[k]
                    if use_shift and c == 0:
                        h = h + shift[j, k] * dt
                    hat[c, k] = h
                    x[c, k] = h
                outside = False
                if wedge:
                    for k in range(d - 1):
                        if x[c, k] > x[c, k + 1]:
                            outside = True
                            break
                else:
                    for f in range(m):
                        acc = -offsets[f]
                        for k in range(d):
                            acc += normals[f, k] * x[c, k]
                        if acc < 0.0:
                            outside = True
                            break
                disp[c] = 0.0
                if outside:
                    row = x[c]
                    if wedge:
                        disp[c] = pava_row(row, sums, counts)
                    else:
                        disp[c] = dykstra_row(row, normals, offsets, DYKSTRA_MAX_ITER, DYKSTRA_TOL, incr, z, tmp)
                        if disp[c] < 0.0:
                            stats[STATUS] = 1.0
                            return
                    lt[c] += disp[c]
                    if keep_normals:
                        out = nrm if c == 0 else nrmp
                        for k in range(d):
                            out[i, j, k] = (x[c, k] - hat[c, k]) / disp[c]
            if pair:
                for k in range(d):
                    diff[k] = x[0, k] - x[1, k]
                for c in range(2):
                    if disp[c] > 0.0:
                        if wedge:
                            acc = wedge_push_dot(hat[c], x[c], diff, disp[c])
                        else:
                            acc = 0.0
                            for k in range(d):
                                acc += (x[c, k] - hat[c, k]) / disp[c] * diff[k]
                        if c == 0:
                            stats[SIGN_MAX] = max(stats[SIGN_MAX], acc)
                        else:
                            stats[SIGN_MIN] = min(stats[SIGN_MIN], acc)
                        stats[N_REFL] += 1.0
                full = 0.0
                obs = 0.0
                for k in range(d):
                    e = (x[0, k] - x[1, k]) ** 2
                    full += e
                    if observed[k]:
                        obs += e
                sup_full[i] = max(sup_full[i], full)
                sup_sq[i] = max(sup_sq[i], obs)
                if use_bound:
                    excess = np.sqrt(full) - bound[j + 1]
                    if excess > slack:
                        stats[G_VIOL] += 1.0
                    stats[G_MAX] = max(stats[G_MAX], excess)
            if (j + 1) % record_every == 0:
                r = (j + 1) // record_every
                for k in range(d):
                    rec[i, r, k] = x[0, k]
                lt_rec[i, r] = lt[0]
                if pair:
                    for k in range(d):
                        recp[i, r, k] = x[1, k]
                    ltp_rec[i, r] = lt[1]


@nb.njit(cache=True, nogil=True)
def named_paths(g, sigma, x0, n, dt, key0, key1, start, count, record_every, out):
    """Euler-Maruyama for named rank-based particles with ranks frozen per step."""
    N = x0.shape[0]
    half = (N + 1) // 2
    sq = np.sqrt(dt)
    xi = np.empty(N + 1)
    x = np.empty(N)
    order = np.empty(N, dtype=np.int64)
    k0 = np.uint32(key0)
    k1 = np.uint32(key1)
    for i in range(count):
        path = np.uint64(start + i)
        p_lo = np.uint32(path & _MASK32)
        p_hi = np.uint32(path >> np.uint64(32))
        x[:] = x0
        out[i, 0] = x0
        for a in range(N):
            order[a] = a
        for j in range(n):
            base = np.uint64(j) * np.uint64(half)
            for q in range(half):
                xi[2 * q], xi[2 * q + 1] = _gauss_pair(k0, k1, p_lo, p_hi, base + np.uint64(q))
            # insertion sort on (position, index); the order from the last
            # step is nearly sorted, so this is close to linear
            for a in range(1, N):
                o = order[a]
                b = a - 1
                while b >= 0 and (x[order[b]] > x[o] or (x[order[b]] == x[o] and order[b] > o)):
                    order[b + 1] = order[b]
                    b -= 1
                order[b + 1] = o
            for r in range(N):
                a = order[r]
                x[a] = x[a] + g[r] * dt + sigma[r] * sq * xi[a]
            if (j + 1) % record_every == 0:
                for a in range(N):
                    out[i, (j + 1) // record_every, a] = x[a]
