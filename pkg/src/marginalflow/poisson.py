"""Solvers for the scalar field ``phi`` in ``dp/dt = -lap(phi p)``.

Both solvers work on ``u = phi p``: ``-lap u = dp/dt`` is inverted on the
grid and ``phi = u / p`` is read off nodewise.

* :func:`solve_phi_fourier` divides by ``|xi|^2`` on a zero-padded periodic
  box, then removes the leading periodic-image term so that ``u`` carries the
  free-space (vanishing at infinity) normalization.
* :func:`solve_phi_green` convolves with the free-space kernel
  ``1/(4 pi |x|)`` (d = 3 only), truncated beyond the box diagonal so its
  transform is known in closed form and the convolution is aperiodic.

Both also return ``grad u`` computed in spectral space, which
:func:`grad_phi` consumes.
"""

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import AssumptionViolation, DomainError, UnderflowError, UnsupportedDimensionError
from .grid import ScalarGridField, VectorGridField

P_FLOOR = 1e-300
DTP_MEAN_RTOL = 1e-6
# Padding per axis for the Green solver: the box plus a kernel reach of one
# diagonal (sqrt(3) box lengths) must fit without wrap-around.
GREEN_PAD = 3


def _padded_shape(shape, factor=2):
    return tuple(1 << int(np.ceil(np.log2(factor * k))) for k in shape)


def _workers():
    return kernels.num_threads()


def _check_inputs(p_grid, dtp_grid):
    if p_grid.grid != dtp_grid.grid:
        raise DomainError("p and dtp fields live on different grids")
    dtp = dtp_grid.values
    scale = np.abs(dtp).max()
    if abs(dtp.mean()) > DTP_MEAN_RTOL * scale:
        raise AssumptionViolation(
            f"mean of dp/dt is {dtp.mean():.3e}, exceeds {DTP_MEAN_RTOL:g} x max|dp/dt| = "
            f"{DTP_MEAN_RTOL * scale:.3e}; the grid does not conserve mass")
    low = p_grid.values < P_FLOOR
    if low.any():
        idx = np.unravel_index(np.flatnonzero(low)[0], p_grid.grid.shape)
        raise UnderflowError(f"p underflows ({p_grid.values[idx]:.3e}) at node {idx}")


def _wavenumbers(padded, spacing, real_last=True):
    ks = []
    for ax, (m, h) in enumerate(zip(padded, spacing)):
        if real_last and ax == len(padded) - 1:
            ks.append(2.0 * np.pi * sfft.rfftfreq(m, h))
        else:
            ks.append(2.0 * np.pi * sfft.fftfreq(m, h))
    return np.meshgrid(*ks, indexing="ij", sparse=True)


def _pad(values, padded):
    out = np.zeros(padded)
    out[tuple(slice(0, k) for k in values.shape)] = values
    return out


def _crop(values, shape):
    return values[tuple(slice(0, k) for k in shape)]


def periodic_inverse_laplacian(values, spacing, padded=None, with_gradient=False):
    """Zero-mean periodic solution of ``-lap u = values`` on the padded box.

    Returns the full padded array (and its spectral gradient when requested);
    the DC mode is pinned to zero, so the padded solution has zero mean.
    """
    shape = values.shape
    padded = padded or _padded_shape(shape)
    spec = sfft.rfftn(_pad(values, padded), workers=_workers())
    xi = _wavenumbers(padded, spacing)
    k2 = sum(k * k for k in xi)
    k2[(0,) * len(shape)] = 1.0
    spec /= k2
    spec[(0,) * len(shape)] = 0.0
    u = sfft.irfftn(spec, s=padded, workers=_workers())
    if not with_gradient:
        return u
    grads = [sfft.irfftn(1j * k * spec, s=padded, workers=_workers()) for k in xi]
    return u, grads


def _centred_mesh(grid):
    centre = grid.lower + 0.5 * grid.spacing * (grid.n - 1)
    return [m - c for m, c in zip(grid.mesh(), centre)]


def solve_phi_fourier(p_grid, dtp_grid, pad_factor=2):
    """Spectral solve on a zero-padded box; returns ``(u, phi)``.

    ``u.grad`` holds the spectral gradient of ``u``.
    """
    _check_inputs(p_grid, dtp_grid)
    grid = p_grid.grid
    f = dtp_grid.values
    padded = _padded_shape(grid.shape, pad_factor)
    u_pad, g_pad = periodic_inverse_laplacian(f, grid.spacing, padded, with_gradient=True)
    u = _crop(u_pad, grid.shape).copy()
    grads = [_crop(g, grid.shape).copy() for g in g_pad]

    # Periodic images add a smooth harmonic-plus-uniform-source term whose
    # quadratic part is |x - y|^2 / (2 d V) convolved with f; subtracting it
    # restores the free-space normalization up to quartic image terms.
    d = grid.dim
    V = float(np.prod(np.asarray(padded) * grid.spacing))
    w = grid.cell_volume
    X = _centred_mesh(grid)
    m0 = f.sum() * w
    m1 = [float((x * f).sum() * w) for x in X]
    m2 = float((sum(x * x for x in X) * f).sum() * w)
    r2 = sum(x * x for x in X)
    u -= (r2 * m0 - 2.0 * sum(x * m for x, m in zip(X, m1)) + m2) / (2.0 * d * V)
    for ax in range(d):
        grads[ax] -= (X[ax] * m0 - m1[ax]) / (d * V)

    u_field = ScalarGridField(grid, u, "u")
    u_field.grad = VectorGridField(grid, np.stack(grads), "grad_u")
    phi = ScalarGridField(grid, u / p_grid.values, "phi")
    return u_field, phi


def _truncated_kernel_hat(grid, padded, radius):
    """Fourier transform of ``1/(4 pi |x|)`` cut off at ``|x| = radius``.

    ``(1 - cos(R k)) / k^2``, with the ``k -> 0`` limit ``R^2 / 2``.
    """
    xi = _wavenumbers(padded, grid.spacing)
    k = np.sqrt(sum(x * x for x in xi))
    with np.errstate(divide="ignore", invalid="ignore"):
        G = 2.0 * np.sin(0.5 * radius * k) ** 2 / (k * k)
    G[0, 0, 0] = 0.5 * radius * radius
    return G, xi


def solve_phi_green(dtp_grid, p_grid):
    """Free-space convolution with the fundamental solution (d = 3).

    The kernel is truncated at the box diagonal, which leaves the convolution
    unchanged for every pair of nodes, and the truncated kernel has a closed
    form transform. On a box padded by ``GREEN_PAD`` per axis the periodic
    images of the truncated kernel never reach the original box, so one FFT
    product gives the aperiodic free-space result with spectral accuracy.

    Returns ``(u, phi)``; ``u.grad`` is the same convolution applied to the
    spectral gradient of ``dp/dt``.
    """
    grid = p_grid.grid
    if grid.dim != 3:
        raise UnsupportedDimensionError(
            f"the Green-function solver is implemented for d = 3 only (got d = {grid.dim})")
    _check_inputs(p_grid, dtp_grid)
    padded = tuple(GREEN_PAD * k for k in grid.shape)
    radius = float(np.linalg.norm(grid.n * grid.spacing))
    G, xi = _truncated_kernel_hat(grid, padded, radius)
    spec = sfft.rfftn(_pad(dtp_grid.values, padded), workers=_workers()) * G

    def back(s):
        return _crop(sfft.irfftn(s, s=padded, workers=_workers()), grid.shape).copy()

    u = back(spec)
    grads = [back(1j * k * spec) for k in xi]
    u_field = ScalarGridField(grid, u, "u")
    u_field.grad = VectorGridField(grid, np.stack(grads), "grad_u")
    phi = ScalarGridField(grid, u / p_grid.values, "phi")
    return u_field, phi


def spectral_gradient(field, pad_factor=2):
    """Gradient by ``i xi`` multiplication on a zero-padded box.

    Accurate for fields that decay to zero at the box edge.
    """
    grid = field.grid
    padded = _padded_shape(grid.shape, pad_factor)
    spec = sfft.rfftn(_pad(field.values, padded), workers=_workers())
    xi = _wavenumbers(padded, grid.spacing)
    comps = [_crop(sfft.irfftn(1j * k * spec, s=padded, workers=_workers()), grid.shape)
             for k in xi]
    return VectorGridField(grid, np.stack(comps), "grad")


def grad_phi(phi, p_grid, u, path=None, t=None):
    """``grad phi = (grad u - phi grad p) / p`` on the grid.

    ``grad u`` comes from the solver when attached to ``u``, else from spectral
    differentiation of ``u``. ``grad p`` is analytic when ``path`` and ``t``
    are given.
    """
    grid = phi.grid
    if p_grid.grid != grid or u.grid != grid:
        raise DomainError("phi, p and u must share a grid")
    low = p_grid.values < P_FLOOR
    if low.any():
        idx = np.unravel_index(np.flatnonzero(low)[0], grid.shape)
        raise UnderflowError(f"p underflows at node {idx}")
    gu = getattr(u, "grad", None)
    gu = gu.values if gu is not None else spectral_gradient(u).values
    if path is not None and t is not None:
        gp = path.grad_prob(grid.points(), t).T.reshape((grid.dim,) + grid.shape)
    else:
        gp = spectral_gradient(p_grid).values
    vals = (gu - phi.values[None] * gp) / p_grid.values[None]
    return VectorGridField(grid, vals, "grad_phi")


def solve_phi(path, grid, t, solver="fourier"):
    """Sample ``path`` at ``t`` and run one solver; returns ``(u, phi, grad_phi)``."""
    from .grid import sample_on_grid

    p = sample_on_grid(path, grid, t, "p")
    dtp = sample_on_grid(path, grid, t, "dtp")
    if solver == "fourier":
        u, phi = solve_phi_fourier(p, dtp)
    elif solver == "green":
        u, phi = solve_phi_green(dtp, p)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return u, phi, grad_phi(phi, p, u, path, t)


def high_density_mask(p_grid, rel=1e-4):
    return p_grid.values >= rel * p_grid.values.max()


def rel_l2(a, b, mask=None):
    """``||a - b|| / ||b||`` over ``mask``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if mask is not None:
        a, b = a[..., mask], b[..., mask]
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))
