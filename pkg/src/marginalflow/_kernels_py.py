"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_kernels_cy`` mirrors them one to one.
"""

import numpy as np
from scipy.spatial.distance import cdist

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53


def philox4x32(c0, c1, c2, c3, k0, k1, rounds=10):
    """Philox-4x32 block cipher on uint64 arrays holding 32-bit words."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in (c0, c1, c2, c3))
    k0 = np.uint64(int(k0) & 0xFFFFFFFF)
    k1 = np.uint64(int(k1) & 0xFFFFFFFF)
    for i in range(rounds):
        if i:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = ((p1 >> _S32) ^ c1 ^ k0, p1 & _MASK,
                          (p0 >> _S32) ^ c3 ^ k1, p0 & _MASK)
    return c0, c1, c2, c3


def counter_normals(seed, paths, step, dim, threads=1):
    """Standard normals keyed by ``(seed, path, step, component)``.

    Returns an array of shape ``(len(paths), dim)``. Each pair of components
    comes from one Philox block through Box-Muller, so a value depends only on
    its key and never on batch composition.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    seed = int(seed) % 2**64
    step = int(step)
    out = np.empty((paths.shape[0], dim))
    c0 = np.full(paths.shape, step & 0xFFFFFFFF, dtype=np.uint64)
    c1 = np.full(paths.shape, (step >> 32) & 0xFFFFFFFF, dtype=np.uint64)
    for block in range((dim + 1) // 2):
        x0, x1, x2, x3 = philox4x32(c0, c1, paths, np.full(paths.shape, block, np.uint64),
                                    seed & 0xFFFFFFFF, seed >> 32)
        a = (x0 << _S32) | x1
        b = (x2 << _S32) | x3
        u1 = ((a >> _S11) + np.uint64(1)).astype(float) * _TWO_M53
        u2 = (b >> _S11).astype(float) * _TWO_M53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out[:, 2 * block] = rad * np.cos(ang)
        if 2 * block + 1 < dim:
            out[:, 2 * block + 1] = rad * np.sin(ang)
    return out


def interp_multilinear(table, lower, spacing, shape, points, threads=1):
    """Multilinear interpolation of ``table`` (ncomp, prod(shape)) at ``points`` (N, d).

    Points must lie in the node hull; the caller checks.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    shape = np.asarray(shape)
    s = (points - np.asarray(lower)) / np.asarray(spacing)
    r = np.rint(s)
    s = np.where(np.abs(s - r) < 1e-9, r, s)
    i0 = np.clip(np.floor(s).astype(np.int64), 0, shape - 2)
    f = s - i0
    strides = np.ones(d, dtype=np.int64)
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]
    out = np.zeros((n, table.shape[0]))
    for corner in range(1 << d):
        w = np.ones(n)
        idx = np.zeros(n, dtype=np.int64)
        for ax in range(d):
            bit = (corner >> ax) & 1
            w = w * (f[:, ax] if bit else 1.0 - f[:, ax])
            idx = idx + (i0[:, ax] + bit) * strides[ax]
        out += w[:, None] * table[:, idx].T
    return out


def mean_pairwise_distance(a, b, threads=1, chunk=2048):
    """Mean Euclidean distance over all pairs ``(a_i, b_j)``."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    rows = np.empty(a.shape[0])
    for start in range(0, a.shape[0], chunk):
        rows[start:start + chunk] = cdist(a[start:start + chunk], b).sum(axis=1)
    return float(rows.sum()) / (a.shape[0] * b.shape[0])
