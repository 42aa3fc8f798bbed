"""Regular grids, fields sampled on them, and their file formats.

Nodes sit at ``lower + i * h`` for ``i = 0 .. n-1`` with ``h = (upper - lower) / n``,
i.e. the box is a periodic cell and ``upper`` itself is not a node. With even
``n`` the box centre is a node.

MFLO binary layout (little-endian)::

    b"MFLO" | u32 version | u32 d | u32 n_1 .. n_d | f64 lower_1, upper_1, .. | f64 values

Values are row-major; vector fields store their ``d`` components one after
another, so a reader infers the component count from the payload size (in
one dimension the two layouts coincide and read back as a scalar field).
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (BadMagicError, ConstructionError, DomainError, FormatError,
                     NonFiniteError, OutOfDomainError)

MAGIC = b"MFLO"
FORMAT_VERSION = 1
MAX_POINTS = 2**27


class RegularGrid:
    def __init__(self, lower, upper, n):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        n = np.atleast_1d(np.asarray(n, dtype=int))
        if n.shape == (1,) and lower.shape[0] > 1:
            n = np.repeat(n, lower.shape[0])
        if not (lower.shape == upper.shape == n.shape) or lower.ndim != 1:
            raise ConstructionError("lower, upper and n must have one entry per axis")
        if not 1 <= lower.shape[0] <= 3:
            raise ConstructionError("grids support d in {1, 2, 3}")
        if np.any(upper <= lower):
            raise ConstructionError("upper bound must exceed lower bound on every axis")
        if np.any(n < 8):
            raise ConstructionError("at least 8 points per axis")
        if int(np.prod(n)) > MAX_POINTS:
            raise ConstructionError(f"grid has {int(np.prod(n))} points, limit is {MAX_POINTS}")
        self.lower = lower
        self.upper = upper
        self.n = n
        self.spacing = (upper - lower) / n

    @classmethod
    def cube(cls, dim, half_width, n):
        return cls([-half_width] * dim, [half_width] * dim, [n] * dim)

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def shape(self):
        return tuple(int(v) for v in self.n)

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def hull(self):
        """Bounds of the node hull, the domain of interpolation."""
        return self.lower.copy(), self.lower + (self.n - 1) * self.spacing

    def axes(self):
        return [lo + h * np.arange(k) for lo, h, k in zip(self.lower, self.spacing, self.n)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self):
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def node(self, index):
        return self.lower + self.spacing * np.asarray(index)

    def contains(self, x, tol=1e-12):
        lo, hi = self.hull
        pad = tol * np.maximum(1.0, np.abs(hi - lo))
        x = np.asarray(x, dtype=float)
        return np.all((x >= lo - pad) & (x <= hi + pad), axis=-1)

    def interior_mask(self, ring=2):
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = slice(0, ring)
            mask[tuple(idx)] = False
            idx[ax] = slice(self.shape[ax] - ring, None)
            mask[tuple(idx)] = False
        return mask

    def __eq__(self, other):
        return (isinstance(other, RegularGrid) and np.array_equal(self.n, other.n)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper), self.shape))

    def __repr__(self):
        return f"RegularGrid(lower={self.lower.tolist()}, upper={self.upper.tolist()}, n={self.shape})"

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "n": list(self.shape)}


@dataclass
class ScalarGridField:
    grid: RegularGrid
    values: np.ndarray
    label: str = "p"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def ncomp(self):
        return 1

    def _table(self):
        return self.values.reshape(1, -1)


@dataclass
class VectorGridField:
    grid: RegularGrid
    values: np.ndarray
    label: str = "grad_phi"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(
            (self.grid.dim,) + self.grid.shape)

    @property
    def ncomp(self):
        return self.grid.dim

    def _table(self):
        return self.values.reshape(self.grid.dim, -1)


def sample_on_grid(path, grid, t, which="p"):
    """Evaluate ``p`` or ``dtp`` of ``path`` at every node."""
    if grid.dim != path.dim:
        raise DomainError(f"grid dimension {grid.dim} does not match path dimension {path.dim}")
    pts = grid.points()
    if which == "p":
        vals = path.prob(pts, t)
    elif which == "dtp":
        vals = path.dt_prob(pts, t)
    else:
        raise ValueError(f"which must be 'p' or 'dtp', got {which!r}")
    vals = vals.reshape(grid.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = np.unravel_index(np.flatnonzero(bad)[0], grid.shape)
        raise NonFiniteError(f"non-finite {which} at node {idx}", index=idx)
    return ScalarGridField(grid, vals, which)


def interpolate(field, x):
    """Multilinear interpolation; exact at nodes.

    ``x`` has shape ``(d,)`` or ``(..., d)``. Points outside the node hull
    raise :class:`OutOfDomainError`.
    """
    grid = field.grid
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != grid.dim:
        raise DomainError(f"points have dimension {x.shape[-1]}, grid has {grid.dim}")
    flat = x.reshape(-1, grid.dim)
    inside = grid.contains(flat)
    if not inside.all():
        bad = flat[np.flatnonzero(~inside)[0]]
        raise OutOfDomainError(f"point {bad.tolist()} is outside the grid box")
    out = kernels.interp_multilinear(field._table(), grid.lower, grid.spacing, grid.shape, flat)
    if isinstance(field, ScalarGridField):
        return out[:, 0].reshape(x.shape[:-1])
    return out.reshape(x.shape[:-1] + (grid.dim,))


# --- serialization ------------------------------------------------------------

def write_mflo(path, field):
    grid = field.grid
    header = bytearray(MAGIC)
    header += struct.pack("<II", FORMAT_VERSION, grid.dim)
    header += struct.pack(f"<{grid.dim}I", *grid.shape)
    bounds = np.column_stack([grid.lower, grid.upper]).ravel()
    header += bounds.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_mflo(path, label=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, d = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported MFLO version {version}")
    if not 1 <= d <= 3:
        raise FormatError(f"{path}: invalid dimension {d}")
    off = 12
    counts = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    bounds = np.frombuffer(data, dtype="<f8", count=2 * d, offset=off).reshape(d, 2)
    off += 16 * d
    values = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
    grid = RegularGrid(bounds[:, 0], bounds[:, 1], counts)
    if values.size == grid.size:
        return ScalarGridField(grid, values, label or "phi")
    if values.size == d * grid.size:
        return VectorGridField(grid, values, label or "grad_phi")
    raise FormatError(f"{path}: payload of {values.size} values does not match grid {counts}")


def fmt_float(v):
    """Shortest round-trip decimal form."""
    return repr(float(v))


def write_grid_csv(path, field):
    grid = field.grid
    pts = grid.points()
    cols = [f"x{i + 1}" for i in range(grid.dim)]
    if isinstance(field, ScalarGridField):
        vals = field.values.reshape(-1, 1)
        cols.append("value")
    else:
        vals = field.values.reshape(grid.dim, -1).T
        cols += [f"value{i + 1}" for i in range(grid.dim)]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for p, v in zip(pts, vals):
            fh.write(",".join(fmt_float(a) for a in np.concatenate([p, v])) + "\n")
