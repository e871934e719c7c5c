# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_fallback`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef extern from *:
    """
    typedef unsigned __int128 db_u128;
    static inline void db_mulhilo(unsigned long long a, unsigned long long b,
                                  unsigned long long *hi, unsigned long long *lo) {
        db_u128 p = (db_u128)a * (db_u128)b;
        *hi = (unsigned long long)(p >> 64);
        *lo = (unsigned long long)p;
    }
    """
    void db_mulhilo(unsigned long long a, unsigned long long b,
                    unsigned long long *hi, unsigned long long *lo) nogil

from scipy.special.cython_special cimport ndtri

cdef unsigned long long M0 = 0xD2E7470EE14C6C93ULL
cdef unsigned long long M1 = 0xCA5A826395121157ULL
cdef unsigned long long W0 = 0x9E3779B97F4A7C15ULL
cdef unsigned long long W1 = 0xBB67AE8584CAA73BULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline void _philox(unsigned long long *c, unsigned long long k0,
                         unsigned long long k1) noexcept nogil:
    cdef unsigned long long hi0, lo0, hi1, lo1, c1, c3
    cdef int r
    for r in range(10):
        if r:
            k0 += W0
            k1 += W1
        db_mulhilo(M0, c[0], &hi0, &lo0)
        db_mulhilo(M1, c[2], &hi1, &lo1)
        c1 = c[1]
        c3 = c[3]
        c[0] = hi1 ^ c1 ^ k0
        c[1] = lo1
        c[2] = hi0 ^ c3 ^ k1
        c[3] = lo0


cdef inline double _normal(unsigned long long seed, unsigned long long path,
                           unsigned long long node, unsigned long long tag,
                           long slot) noexcept nogil:
    cdef unsigned long long c[4]
    c[0] = path
    c[1] = node
    c[2] = tag
    c[3] = <unsigned long long>(slot // 4)
    _philox(c, seed, 0)
    cdef double u = (<double>(c[slot % 4] >> 11) + 0.5) * TWO_M53
    return ndtri(u)


def philox4x64(counters, key):
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] ctr = np.ascontiguousarray(
        counters, dtype=np.uint64)
    cdef Py_ssize_t n = ctr.shape[0], i
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] out = ctr.copy()
    cdef unsigned long long k0 = int(key[0]), k1 = int(key[1])
    cdef unsigned long long c[4]
    with nogil:
        for i in range(n):
            c[0] = out[i, 0]; c[1] = out[i, 1]; c[2] = out[i, 2]; c[3] = out[i, 3]
            _philox(c, k0, k1)
            out[i, 0] = c[0]; out[i, 1] = c[1]; out[i, 2] = c[2]; out[i, 3] = c[3]
    return out


def normals(seed, paths, nodes, tag, slot=0):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] p = np.ascontiguousarray(
        np.asarray(paths).ravel(), dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] q = np.ascontiguousarray(
        np.asarray(nodes).ravel(), dtype=np.uint64)
    cdef Py_ssize_t n_p = p.shape[0], n_n = q.shape[0], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n_p, n_n))
    cdef unsigned long long s = int(seed), tg = int(tag)
    cdef long sl = slot
    with nogil:
        for i in range(n_p):
            for j in range(n_n):
                out[i, j] = _normal(s, p[i], q[j], tg, sl)
    return out


def normal_scalar(seed, path, node, tag, slot):
    return _normal(int(seed), int(path), int(node), int(tag), slot)


cdef struct Ctx:
    double *t
    double *r0
    double *ru
    double *rr
    unsigned long long seed
    unsigned long long path
    unsigned long long tag
    double clip_c
    int max_depth
    long halvings
    long caps


cdef double _substep(Ctx *cx, double r, double u, Py_ssize_t i, double t0,
                     double h, double w, int depth, long heap) noexcept nogil:
    cdef double xi = _normal(cx.seed, cx.path, i, cx.tag, heap)
    cdef double half = 0.5 * h
    cdef double w1 = 0.5 * w + sqrt(0.25 * h) * xi
    cdef double dt_node = cx.t[i + 1] - cx.t[i]
    cdef double ts, ws, frac, drift, bound
    cdef long child
    cdef int k
    for k in range(2):
        if k == 0:
            ts = t0; ws = w1; child = 2 * heap
        else:
            ts = t0 + half; ws = w - w1; child = 2 * heap + 1
        frac = (ts - cx.t[i]) / dt_node
        drift = ((cx.r0[i] + frac * (cx.r0[i + 1] - cx.r0[i]))
                 + (cx.ru[i] + frac * (cx.ru[i + 1] - cx.ru[i])) * u
                 + (cx.rr[i] + frac * (cx.rr[i + 1] - cx.rr[i])) * r)
        bound = cx.clip_c * sqrt(half)
        if fabs(drift * half) <= bound:
            r = r + drift * half + ws
        elif depth >= cx.max_depth:
            cx.caps += 1
            drift = copysign(bound / half, drift)
            r = r + drift * half + ws
        else:
            cx.halvings += 1
            r = _substep(cx, r, u, i, ts, half, ws, depth + 1, child)
    return r


def bridge_affine(r_init, u, t, r0, ru, rr, dB, seed, path_idx, tag,
                  clip_c=5.0, max_depth=4):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] DB = np.ascontiguousarray(dB, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] T = np.ascontiguousarray(t, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] A0 = np.ascontiguousarray(r0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] AU = np.ascontiguousarray(ru, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] AR = np.ascontiguousarray(rr, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] PI = np.ascontiguousarray(path_idx, dtype=np.uint64)
    cdef Py_ssize_t n_p = U.shape[0], n_nodes = U.shape[1], p, i
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n_p, n_nodes))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] R0 = np.ascontiguousarray(
        np.broadcast_to(np.asarray(r_init, dtype=np.float64), (n_p,)))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] halv = np.zeros(n_p, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] caps = np.zeros(n_p, dtype=np.int64)
    cdef Ctx cx
    cdef double r, dt, drift
    cx.t = &T[0]; cx.r0 = &A0[0]; cx.ru = &AU[0]; cx.rr = &AR[0]
    cx.seed = int(seed); cx.tag = int(tag)
    cx.clip_c = clip_c; cx.max_depth = max_depth
    with nogil:
        for p in range(n_p):
            r = R0[p]
            out[p, 0] = r
            cx.path = PI[p]
            cx.halvings = 0
            cx.caps = 0
            for i in range(n_nodes - 1):
                dt = T[i + 1] - T[i]
                drift = A0[i] + AU[i] * U[p, i] + AR[i] * r
                if fabs(drift * dt) > cx.clip_c * sqrt(dt):
                    cx.halvings += 1
                    r = _substep(&cx, r, U[p, i], i, T[i], dt, DB[p, i], 1, 1)
                else:
                    r = r + drift * dt + DB[p, i]
                out[p, i + 1] = r
            halv[p] = cx.halvings
            caps[p] = cx.caps
    return out, halv, caps


def thomas(lower, diag, upper, rhs):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(lower, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.ascontiguousarray(diag, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c = np.ascontiguousarray(upper, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d = np.array(rhs, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cp = np.empty(n)
    cdef double m
    with nogil:
        cp[0] = c[0] / b[0] if n > 1 else 0.0
        d[0] = d[0] / b[0]
        for i in range(1, n):
            m = b[i] - a[i - 1] * cp[i - 1]
            if i < n - 1:
                cp[i] = c[i] / m
            d[i] = (d[i] - a[i - 1] * d[i - 1]) / m
        for i in range(n - 2, -1, -1):
            d[i] = d[i] - cp[i] * d[i + 1]
    return d


def systematic_resample(weights, double u0):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], i, j = 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cum = np.cumsum(w)
    cdef double pos
    if cum[n - 1] < 1.0:
        cum[n - 1] = 1.0
    with nogil:
        for i in range(n):
            pos = (u0 + i) / n
            while j < n - 1 and cum[j] <= pos:
                j += 1
            idx[i] = j
    return idx
