"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same floating-point operation order, so the two backends agree
bit-for-bit on the random streams and the bridge integrator.
"""
import math

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtri

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_TWO_M53 = 2.0**-53


def _mulhilo(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    carry = ((p0 >> _S32) + (p1 & _M32) + (p2 & _M32)) >> _S32
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + carry
    return hi, a * b


def philox4x64(counters, key):
    """Philox4x64-10 block function.

    counters: uint64 array of shape (n, 4); key: two uint64 words.
    Returns the (n, 4) uint64 output blocks.
    """
    c = np.asarray(counters, dtype=np.uint64)
    c0, c1, c2, c3 = (c[:, j].copy() for j in range(4))
    k0 = np.uint64(key[0])
    k1 = np.uint64(key[1])
    with np.errstate(over="ignore"):
        for r in range(10):
            if r:
                k0 = k0 + PHILOX_W0
                k1 = k1 + PHILOX_W1
            hi0, lo0 = _mulhilo(PHILOX_M0, c0)
            hi1, lo1 = _mulhilo(PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=1)


def _bits_to_normal(x):
    u = ((x >> _S11).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def normals(seed, paths, nodes, tag, slot=0):
    """Standard normals keyed by (seed, path, node, tag, slot).

    Returns an array of shape (len(paths), len(nodes)).
    """
    paths = np.asarray(paths, dtype=np.uint64).ravel()
    nodes = np.asarray(nodes, dtype=np.uint64).ravel()
    n_p, n_n = paths.size, nodes.size
    ctr = np.empty((n_p * n_n, 4), dtype=np.uint64)
    ctr[:, 0] = np.repeat(paths, n_n)
    ctr[:, 1] = np.tile(nodes, n_p)
    ctr[:, 2] = np.uint64(tag)
    ctr[:, 3] = np.uint64(slot // 4)
    out = philox4x64(ctr, (np.uint64(seed), np.uint64(0)))[:, slot % 4]
    return _bits_to_normal(out).reshape(n_p, n_n)


def normal_scalar(seed, path, node, tag, slot):
    return float(normals(seed, [path], [node], tag, slot)[0, 0])


def _lerp(tab, i, frac):
    return tab[i] + frac * (tab[i + 1] - tab[i])


def _substep(r, u, t, i, t0, h, w, r0, ru, rr, seed, path, tag, clip_c,
             depth, max_depth, heap, counts):
    # Brownian-bridge midpoint split of the increment w over [t0, t0 + h].
    xi = normal_scalar(seed, path, i, tag, heap)
    half = 0.5 * h
    w1 = 0.5 * w + math.sqrt(0.25 * h) * xi
    parts = ((t0, w1, 2 * heap), (t0 + half, w - w1, 2 * heap + 1))
    dt_node = t[i + 1] - t[i]
    for ts, ws, child in parts:
        frac = (ts - t[i]) / dt_node
        drift = _lerp(r0, i, frac) + _lerp(ru, i, frac) * u + _lerp(rr, i, frac) * r
        bound = clip_c * math.sqrt(half)
        if abs(drift * half) <= bound:
            r = r + drift * half + ws
        elif depth >= max_depth:
            counts[1] += 1
            drift = math.copysign(bound / half, drift)
            r = r + drift * half + ws
        else:
            counts[0] += 1
            r = _substep(r, u, t, i, ts, half, ws, r0, ru, rr, seed, path,
                         tag, clip_c, depth + 1, max_depth, child, counts)
    return r


def bridge_affine(r_init, u, t, r0, ru, rr, dB, seed, path_idx, tag,
                  clip_c=5.0, max_depth=4):
    """Euler scheme for dR = dB + (r0(t) + ru(t) U + rr(t) R) dt.

    ``u`` holds the signal path on the nodes ``t``; ``dB`` the Brownian
    increments per step. Steps whose drift move exceeds ``clip_c*sqrt(dt)``
    are halved recursively (signal frozen at the left node); at
    ``max_depth`` the drift is capped. Returns (R, halvings, caps).
    """
    u = np.asarray(u, dtype=np.float64)
    dB = np.asarray(dB, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n_p, n_nodes = u.shape
    out = np.empty((n_p, n_nodes))
    out[:, 0] = r_init
    halvings = np.zeros(n_p, dtype=np.int64)
    caps = np.zeros(n_p, dtype=np.int64)
    r = np.array(r_init, dtype=np.float64, copy=True).reshape(n_p)
    for i in range(n_nodes - 1):
        dt = t[i + 1] - t[i]
        drift = r0[i] + ru[i] * u[:, i] + rr[i] * r
        bad = np.abs(drift * dt) > clip_c * math.sqrt(dt)
        r_new = r + drift * dt + dB[:, i]
        for p in np.flatnonzero(bad):
            counts = [1, 0]
            r_new[p] = _substep(float(r[p]), float(u[p, i]), t, i, float(t[i]),
                                dt, float(dB[p, i]), r0, ru, rr, seed,
                                int(path_idx[p]), tag, clip_c, 1, max_depth, 1,
                                counts)
            halvings[p] += counts[0]
            caps[p] += counts[1]
        r = r_new
        out[:, i + 1] = r
    return out, halvings, caps


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system (sub-, main, super-diagonal)."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def systematic_resample(weights, u0):
    """Indices for systematic resampling with offset ``u0`` in [0, 1)."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    cum = np.cumsum(w)
    cum[-1] = max(cum[-1], 1.0)
    pos = (u0 + np.arange(n)) / n
    idx = np.searchsorted(cum, pos, side="right")
    return np.minimum(idx, n - 1).astype(np.int64)
