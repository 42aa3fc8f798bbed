# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``.

Every output element is computed independently inside ``prange``, and
reductions go through per-row buffers summed sequentially, so results do not
depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, sin, floor, fabs, M_PI
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

cdef uint32_t M0 = 0xD2511F53u
cdef uint32_t M1 = 0xCD9E8D57u
cdef uint32_t W0 = 0x9E3779B9u
cdef uint32_t W1 = 0xBB67AE85u
cdef double TWO_M53 = 1.1102230246251565e-16


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t a0, a1, a2, a3
    cdef int i
    for i in range(10):
        if i:
            k0 = k0 + W0
            k1 = k1 + W1
        p0 = <uint64_t>M0 * c[0]
        p1 = <uint64_t>M1 * c[2]
        a0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        a1 = <uint32_t>p1
        a2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        a3 = <uint32_t>p0
        c[0] = a0
        c[1] = a1
        c[2] = a2
        c[3] = a3


cdef inline void _normals_row(double* row, int dim, uint32_t s0, uint32_t s1, uint32_t path,
                              uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint32_t c[4]
    cdef uint64_t a, b
    cdef double u1, u2, rad, ang
    cdef int block
    for block in range((dim + 1) // 2):
        c[0] = s0
        c[1] = s1
        c[2] = path
        c[3] = <uint32_t>block
        _philox(c, k0, k1)
        a = (<uint64_t>c[0] << 32) | c[1]
        b = (<uint64_t>c[2] << 32) | c[3]
        u1 = <double>((a >> 11) + 1) * TWO_M53
        u2 = <double>(b >> 11) * TWO_M53
        rad = sqrt(-2.0 * log(u1))
        ang = 2.0 * M_PI * u2
        row[2 * block] = rad * cos(ang)
        if 2 * block + 1 < dim:
            row[2 * block + 1] = rad * sin(ang)


cdef inline void _interp_point(double[:, ::1] tab, double* pt, double* out, int d, int ncomp,
                               double* lo, double* hs, int64_t* shp,
                               int64_t* strides) noexcept nogil:
    cdef int64_t i0[3]
    cdef double f[3]
    cdef double s, r, w
    cdef int64_t idx
    cdef int ax, corner, bit, comp
    for ax in range(d):
        s = (pt[ax] - lo[ax]) / hs[ax]
        r = floor(s + 0.5)
        if fabs(s - r) < 1e-9:
            s = r
        i0[ax] = <int64_t>floor(s)
        if i0[ax] < 0:
            i0[ax] = 0
        if i0[ax] > shp[ax] - 2:
            i0[ax] = shp[ax] - 2
        f[ax] = s - i0[ax]
    for corner in range(1 << d):
        w = 1.0
        idx = 0
        for ax in range(d):
            bit = (corner >> ax) & 1
            if bit:
                w = w * f[ax]
            else:
                w = w * (1.0 - f[ax])
            idx = idx + (i0[ax] + bit) * strides[ax]
        for comp in range(ncomp):
            out[comp] += w * tab[comp, idx]


def philox4x32(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3, k0, k1):
    cdef uint32_t c[4]
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3
    _philox(c, <uint32_t>(int(k0) & 0xFFFFFFFF), <uint32_t>(int(k1) & 0xFFFFFFFF))
    return c[0], c[1], c[2], c[3]


def counter_normals(seed, paths, step, int dim, int threads=1):
    cdef uint64_t useed = int(seed) % 2**64
    cdef uint64_t ustep = int(step)
    cdef cnp.uint64_t[::1] p = np.ascontiguousarray(paths, dtype=np.uint64)
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty((n, dim))
    cdef double[:, ::1] out = out_arr
    cdef uint32_t k0 = <uint32_t>useed
    cdef uint32_t k1 = <uint32_t>(useed >> 32)
    cdef uint32_t s0 = <uint32_t>ustep
    cdef uint32_t s1 = <uint32_t>(ustep >> 32)
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        _normals_row(&out[i, 0], dim, s0, s1, <uint32_t>p[i], k0, k1)
    return out_arr


def interp_multilinear(table, lower, spacing, shape, points, int threads=1):
    cdef double[:, ::1] tab = np.ascontiguousarray(table, dtype=float)
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=float)
    cdef Py_ssize_t n = pts.shape[0]
    cdef int d = pts.shape[1]
    cdef int ncomp = tab.shape[0]
    cdef double lo[3]
    cdef double hs[3]
    cdef int64_t shp[3]
    cdef int64_t strides[3]
    cdef int ax
    for ax in range(d):
        lo[ax] = lower[ax]
        hs[ax] = spacing[ax]
        shp[ax] = shape[ax]
    strides[d - 1] = 1
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shp[ax + 1]
    out_arr = np.zeros((n, ncomp))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        _interp_point(tab, &pts[i, 0], &out[i, 0], d, ncomp, lo, hs, shp, strides)
    return out_arr


def mean_pairwise_distance(a, b, int threads=1):
    cdef double[:, ::1] x = np.ascontiguousarray(a, dtype=float)
    cdef double[:, ::1] y = np.ascontiguousarray(b, dtype=float)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0]
    cdef int d = x.shape[1]
    rows_arr = np.zeros(n)
    cdef double[::1] rows = rows_arr
    cdef Py_ssize_t i, j
    cdef int k
    cdef double acc, sq, diff
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        acc = 0.0
        for j in range(m):
            sq = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                sq = sq + diff * diff
            acc = acc + sqrt(sq)
        rows[i] = acc
    return float(rows_arr.sum()) / (n * m)
