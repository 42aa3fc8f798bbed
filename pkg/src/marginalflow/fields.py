"""Matrix-valued fields ``A(x, t)`` and their row divergence.

The divergence convention is ``[div A]_i = sum_j d A_ij / d x_j``. Fields
carry a role: ``psd`` (symmetric positive-semidefinite, a diffusion),
``skew`` (skew-symmetric) or ``general``.
"""

import numpy as np

from .errors import ConstructionError, NotPSDError, RoleError
from .grid import interpolate, VectorGridField

SYM_TOL = 1e-12
EIG_FLOOR = -1e-10
ROLES = ("psd", "skew", "general")


def _check_matrix_role(M, role, where=""):
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.abs(M).max())) if M.size else 1.0
    if role == "psd":
        if np.abs(M - np.swapaxes(M, -1, -2)).max(initial=0.0) > SYM_TOL * scale:
            raise ConstructionError(f"matrix is not symmetric{where}")
        lam = np.linalg.eigvalsh(M).min(initial=0.0)
        if lam < EIG_FLOOR * scale:
            raise NotPSDError(f"matrix has eigenvalue {lam:.3e} < {EIG_FLOOR:g}{where}")
    elif role == "skew":
        if np.abs(M + np.swapaxes(M, -1, -2)).max(initial=0.0) > SYM_TOL * scale:
            raise ConstructionError(f"matrix is not skew-symmetric{where}")
    elif role != "general":
        raise ConstructionError(f"unknown role {role!r}")


def psd_sqrt(M):
    """Symmetric square root of a symmetric PSD matrix (or a stack of them).

    Eigenvalues in ``[-1e-10, 0)`` are treated as roundoff and clamped to 0;
    anything more negative raises :class:`NotPSDError`.
    """
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.abs(M).max())) if M.size else 1.0
    if np.abs(M - np.swapaxes(M, -1, -2)).max(initial=0.0) > SYM_TOL * scale:
        raise NotPSDError("psd_sqrt needs a symmetric matrix")
    lam, V = np.linalg.eigh(M)
    if lam.size and lam.min() < EIG_FLOOR * scale:
        raise NotPSDError(f"matrix is not PSD: eigenvalue {lam.min():.3e}")
    root = np.sqrt(np.clip(lam, 0.0, None))
    S = (V * root[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def fd_step(x):
    """Per-point central-difference step, ``max(1e-5, 1e-5 |x|)``."""
    return np.maximum(1e-5, 1e-5 * np.linalg.norm(x, axis=-1))


class MatrixField:
    """Base class; subclasses implement :meth:`value` and optionally
    :meth:`_analytic_divergence`."""

    kind = "abstract"
    has_analytic_divergence = True
    is_zero = False
    is_constant = False
    bounded = True

    def __init__(self, dim, role):
        if role not in ROLES:
            raise ConstructionError(f"unknown role {role!r}")
        self.dim = int(dim)
        self.role = role
        self.divergence_mode = "analytic" if self.has_analytic_divergence else "finite-difference"

    def __repr__(self):
        return f"{type(self).__name__}(d={self.dim}, role={self.role!r})"

    def value(self, x, t):
        raise NotImplementedError

    def _analytic_divergence(self, x, t):
        raise NotImplementedError

    def divergence(self, x, t, mode=None):
        mode = mode or self.divergence_mode
        x = np.asarray(x, dtype=float)
        if mode == "analytic":
            if not self.has_analytic_divergence:
                raise ValueError(f"{self.kind} fields have finite-difference divergence only")
            return self._analytic_divergence(x, t)
        if mode == "finite-difference":
            return self.divergence_fd(x, t)
        raise ValueError(f"unknown divergence mode {mode!r}")

    def divergence_fd(self, x, t):
        x = np.asarray(x, dtype=float)
        h = fd_step(x)[..., None]
        out = np.zeros(x.shape)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            plus = self.value(x + h * e, t)[..., :, j]
            minus = self.value(x - h * e, t)[..., :, j]
            out += (plus - minus) / (2.0 * h)
        return out

    def check_role(self, x, t):
        """Raise if the role invariant fails at any of the points ``x``."""
        _check_matrix_role(self.value(x, t), self.role, f" ({self.kind} field at t={t})")


def require_role(field, role, name="field"):
    if field.role != role:
        raise RoleError(f"{name} must have role {role!r}, got {field.role!r}")
    if field.dim is None:
        raise RoleError(f"{name} has no dimension")
    return field


class ConstantField(MatrixField):
    kind = "constant"
    is_constant = True

    def __init__(self, M, role):
        M = np.array(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConstructionError("constant field needs a square matrix")
        super().__init__(M.shape[0], role)
        _check_matrix_role(M, role)
        self.matrix = M
        self.is_zero = not M.any()

    def value(self, x, t):
        x = np.asarray(x)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape)

    def _analytic_divergence(self, x, t):
        return np.zeros(np.asarray(x).shape)


def make_constant_field(M, role):
    return ConstantField(M, role)


def zero_field(dim, role="psd"):
    return ConstantField(np.zeros((dim, dim)), role)


class LinearField(MatrixField):
    """``A_ij(x) = C_ij + sum_k L_ijk x_k``."""

    kind = "linear"

    def __init__(self, const, slopes, role):
        const = np.array(const, dtype=float)
        slopes = np.array(slopes, dtype=float)
        d = const.shape[0]
        if const.shape != (d, d) or slopes.shape != (d, d, d):
            raise ConstructionError("linear field needs C of shape (d, d) and L of shape (d, d, d)")
        if role == "psd":
            raise ConstructionError("affine fields cannot be PSD everywhere unless constant")
        super().__init__(d, role)
        _check_matrix_role(const, role)
        # slopes along each x_k must obey the role too
        _check_matrix_role(np.moveaxis(slopes, -1, 0), role)
        self.const = const
        self.slopes = slopes
        self.bounded = not slopes.any()
        self.is_zero = not (const.any() or slopes.any())

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        return self.const + np.einsum("ijk,...k->...ij", self.slopes, x)

    def _analytic_divergence(self, x, t):
        div = np.einsum("ijj->i", self.slopes)
        return np.broadcast_to(div, np.asarray(x).shape).copy()


def make_linear_skew_field(coefficients, const=None):
    """Skew field with entries affine in ``x``.

    ``coefficients[i, j, k]`` is ``dQ_ij / dx_k``; ``const`` defaults to zero.
    Skew symmetry of both parts is validated, not imposed.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    d = coefficients.shape[0]
    const = np.zeros((d, d)) if const is None else const
    return LinearField(const, coefficients, "skew")


class RadialIsotropicField(MatrixField):
    """``(a + b |x|^2) I``."""

    kind = "radial-isotropic"

    def __init__(self, dim, a, b, role="psd"):
        if not a > 0:
            raise ConstructionError(f"radial field needs a > 0, got {a}")
        if not b >= 0:
            raise ConstructionError(f"radial field needs b >= 0, got {b}")
        if role != "psd":
            raise ConstructionError("radial-isotropic fields are symmetric; role must be psd")
        super().__init__(dim, role)
        self.a = float(a)
        self.b = float(b)
        self.bounded = self.b == 0.0
        self.is_constant = self.b == 0.0

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        c = self.a + self.b * np.einsum("...i,...i->...", x, x)
        return c[..., None, None] * np.eye(self.dim)

    def _analytic_divergence(self, x, t):
        return 2.0 * self.b * np.asarray(x, dtype=float)


def make_radial_isotropic_field(a, b, dim=3, role="psd"):
    return RadialIsotropicField(dim, a, b, role)


class TableField(MatrixField):
    """Grid-sampled field with multilinear interpolation.

    ``values`` has shape ``(d, d) + grid.shape``. Divergence is finite
    difference only.
    """

    kind = "callable-table"
    has_analytic_divergence = False

    def __init__(self, grid, values, role):
        values = np.asarray(values, dtype=float)
        d = grid.dim
        if values.shape != (d, d) + grid.shape:
            raise ConstructionError(f"table must have shape {(d, d) + grid.shape}")
        super().__init__(d, role)
        _check_matrix_role(np.moveaxis(values.reshape(d, d, -1), -1, 0), role,
                           " (table entry)")
        self.grid = grid
        self._field = VectorGridField(grid, np.zeros((d,) + grid.shape))
        self._table = values.reshape(d * d, -1)

    def value(self, x, t):
        from . import kernels
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        interpolate(self._field, flat)  # domain check
        out = kernels.interp_multilinear(self._table, self.grid.lower, self.grid.spacing,
                                         self.grid.shape, flat)
        return out.reshape(x.shape[:-1] + (self.dim, self.dim))


class ScaledField(MatrixField):
    """``c(t) * base(x, t)`` for a scalar schedule ``c``."""

    def __init__(self, base, scale):
        self.has_analytic_divergence = base.has_analytic_divergence
        super().__init__(base.dim, base.role)
        self.base = base
        self.scale = scale
        self.kind = f"scaled-{base.kind}"
        self.bounded = base.bounded
        self.is_zero = base.is_zero

    def _c(self, t):
        c = float(self.scale(t))
        if self.role == "psd" and c < 0:
            raise NotPSDError(f"negative scale {c} on a psd field at t={t}")
        return c

    def value(self, x, t):
        return self._c(t) * self.base.value(x, t)

    def _analytic_divergence(self, x, t):
        return self._c(t) * self.base.divergence(x, t, "analytic")


class TimeReversedField(MatrixField):
    """``A_bar(y, s) = A(y, T - s)``."""

    def __init__(self, base, T):
        self.has_analytic_divergence = base.has_analytic_divergence
        super().__init__(base.dim, base.role)
        self.base = base
        self.T = float(T)
        self.kind = base.kind
        self.bounded = base.bounded
        self.is_zero = base.is_zero
        self.is_constant = base.is_constant

    def value(self, x, s):
        return self.base.value(x, self.T - s)

    def _analytic_divergence(self, x, s):
        return self.base.divergence(x, self.T - s, "analytic")

    def divergence_fd(self, x, s):
        return self.base.divergence_fd(x, self.T - s)


def time_reversed(field, T):
    if isinstance(field, TimeReversedField) and field.T == float(T):
        return field.base
    return TimeReversedField(field, T)


def divergence(field, x, t, mode=None):
    return field.divergence(x, t, mode)
