"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy versions
in ``_kernels_py`` take over. ``MARGINALFLOW_BACKEND=python`` forces the
fallback. Worker count comes from ``MARGINALFLOW_THREADS`` and never changes
results.
"""

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("MARGINALFLOW_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by MARGINALFLOW_BACKEND")
    from . import _kernels_cy as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


def num_threads():
    raw = os.environ.get("MARGINALFLOW_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def get_backend(name=None):
    """Module implementing the kernels: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels_cy
        return _kernels_cy
    raise ValueError(f"unknown backend {name!r}")


def counter_normals(seed, paths, step, dim):
    paths = np.asarray(paths, dtype=np.uint64)
    if paths.size == 0:
        return np.empty((0, dim))
    return _impl.counter_normals(seed, paths, step, dim, threads=num_threads())


def interp_multilinear(table, lower, spacing, shape, points):
    points = np.asarray(points, dtype=float)
    if points.shape[0] == 0:
        return np.empty((0, table.shape[0]))
    return _impl.interp_multilinear(np.ascontiguousarray(table, dtype=float),
                                    list(lower), list(spacing), list(shape), points,
                                    threads=num_threads())


def mean_pairwise_distance(a, b):
    """Mean Euclidean distance over all pairs; 0 when either set is empty."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0.0
    return _impl.mean_pairwise_distance(a, b, threads=num_threads())
