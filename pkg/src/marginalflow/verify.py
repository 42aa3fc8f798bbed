"""Numerical checks that a drift really carries the prescribed marginals.

Two independent routes:

* grid residuals of the Fokker-Planck balance ``dp/dt + div J = 0`` with
  ``J = b p - div(Sigma p)``, using fourth-order central differences and an
  interior mask that drops a two-cell boundary ring;
* two-sample distances (sliced Wasserstein-1 and energy distance) between
  simulated snapshots and exact draws, judged against an exact-vs-exact
  baseline of the same size.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decomp import assemble_drift
from .errors import DomainError, NonFiniteError, RoleError
from .grid import ScalarGridField, fmt_float
from .sim import simulate_ensemble, snapshot

RING = 2
PASS_FACTOR = 3.0


def _deriv4(f, h, axis):
    """Fourth-order central difference along ``axis``; the two outermost nodes on
    each side (always outside the interior mask) fall back to second order."""
    out = np.gradient(f, h, axis=axis, edge_order=2)
    n = f.shape[axis]
    if n < 5:
        return out

    def sl(a, b):
        idx = [slice(None)] * f.ndim
        idx[axis] = slice(a, n + b if b <= 0 else b)
        return tuple(idx)

    out[sl(2, -2)] = (f[sl(0, -4)] - 8 * f[sl(1, -3)] + 8 * f[sl(3, -1)] - f[sl(4, 0)]) / (12 * h)
    return out


def _div_parts(vec, spacing):
    return [_deriv4(vec[i], spacing[i], i) for i in range(len(spacing))]


def _central_div(vec, spacing):
    """``sum_i d vec_i / d x_i`` by central differences."""
    return sum(_div_parts(vec, spacing))


def _grad(scalar, spacing):
    return np.stack([np.gradient(scalar, spacing[i], axis=i) for i in range(len(spacing))])


def _on_grid(fn, grid, shape_tail=(), chunk=1 << 16):
    """Evaluate ``fn(points)`` at every node, in chunks, as ``shape_tail + grid.shape``."""
    pts = grid.points()
    parts = [np.asarray(fn(pts[a:a + chunk])) for a in range(0, len(pts), chunk)]
    vals = np.concatenate(parts)
    bad = ~np.isfinite(vals.reshape(len(pts), -1)).all(axis=1)
    if bad.any():
        idx = np.unravel_index(np.flatnonzero(bad)[0], grid.shape)
        raise NonFiniteError(f"non-finite value at node {idx}", index=idx)
    vals = vals.reshape((len(pts),) + tuple(shape_tail))
    return np.moveaxis(vals, 0, -1).reshape(tuple(shape_tail) + grid.shape)


def _norm(a, mask):
    return float(np.linalg.norm(a[mask]))


@dataclass
class ResidualReport:
    grid: object
    t: float
    residual: ScalarGridField
    rel_l2: float
    abs_l2: float
    denominator: float
    normalization: str
    mask: np.ndarray = field(repr=False)
    tolerance: float = None

    @property
    def passed(self):
        return self.tolerance is None or self.rel_l2 <= self.tolerance

    def to_dict(self):
        out = {"t": self.t, "grid": self.grid.to_dict(), "rel_l2": self.rel_l2,
               "abs_l2": self.abs_l2, "denominator": self.denominator,
               "normalization": self.normalization, "interior_ring": RING}
        if self.tolerance is not None:
            out.update(tolerance=self.tolerance, passed=self.passed)
        return out


def fokker_planck_residual(sde, path, grid, t, tolerance=None):
    """Grid residual ``R = dp/dt + div(b p - (div Sigma) p - Sigma grad p)``.

    ``b``, ``p``, ``grad p``, ``Sigma`` and ``div Sigma`` are analytic at the
    nodes; only the outer divergence is a finite difference. The norm is
    relative to ``||dp/dt||`` on the interior, or, for stationary paths where
    that vanishes, to the larger gross divergence ``sum_i |d_i J_i|`` of the
    drift and diffusion fluxes.
    """
    if grid.dim != sde.dim or path.dim != sde.dim:
        raise DomainError("grid, path and SDE dimensions disagree")
    d = grid.dim
    p = _on_grid(lambda x: path.prob(x, t), grid)
    dtp = _on_grid(lambda x: path.dt_prob(x, t), grid)
    gp = _on_grid(lambda x: path.grad_prob(x, t), grid, (d,))
    b = _on_grid(lambda x: sde.drift(x, t), grid, (d,))
    sig = _on_grid(lambda x: sde.diffusion.value(x, t), grid, (d, d))
    dsig = _on_grid(lambda x: sde.diffusion.divergence(x, t), grid, (d,))

    flux_drift = b * p
    flux_diff = dsig * p + np.einsum("ij...,j...->i...", sig, gp)
    parts_drift = _div_parts(flux_drift, grid.spacing)
    parts_diff = _div_parts(flux_diff, grid.spacing)
    R = dtp + sum(parts_drift) - sum(parts_diff)

    mask = grid.interior_mask(RING)
    num = _norm(R, mask)
    den = _norm(dtp, mask)
    # gross divergence: a rotation's flux has large axis terms that cancel exactly
    scale = max(_norm(sum(np.abs(q) for q in parts_drift), mask),
                _norm(sum(np.abs(q) for q in parts_diff), mask))
    normalization = "dtp"
    if den <= 1e-12 * max(scale, np.finfo(float).tiny):
        den = scale
        normalization = "flux"
    rel = num / den if den > 0 else num
    return ResidualReport(grid, float(t), ScalarGridField(grid, R, "residual"), float(rel),
                          num, den, normalization, mask, tolerance)


def dq_preservation_check(field_, path, grid, t):
    """Relative interior norm of the divergence of one field's flux contribution.

    skew ``Q``: ``div div (Q p)``, with both divergences as central
    differences (they commute, so only roundoff remains).

    psd ``D``: ``div[(D grad log p + div D) p - div(D p)]``; the first flux is
    analytic, the second a central difference.
    """
    role = field_.role
    if role not in ("skew", "psd"):
        raise RoleError(f"identity is defined for psd or skew fields, got role {role!r}")
    d = grid.dim
    h = grid.spacing
    mask = grid.interior_mask(RING)
    p = _on_grid(lambda x: path.prob(x, t), grid)
    A = _on_grid(lambda x: field_.value(x, t), grid, (d, d))
    Ap = A * p
    if role == "skew":
        parts = [np.gradient(np.gradient(Ap[i, j], h[j], axis=j), h[i], axis=i)
                 for i in range(d) for j in range(d)]
        total = sum(parts)
        den = _norm(sum(np.abs(q) for q in parts), mask)
        return _norm(total, mask) / den if den > 0 else _norm(total, mask)
    gp = _on_grid(lambda x: path.grad_prob(x, t), grid, (d,))
    divA = _on_grid(lambda x: field_.divergence(x, t), grid, (d,))
    analytic = np.einsum("ij...,j...->i...", A, gp) + divA * p
    fd = np.stack([sum(np.gradient(Ap[i, j], h[j], axis=j) for j in range(d)) for i in range(d)])
    num = _norm(_central_div(analytic - fd, h), mask)
    den = _norm(_central_div(analytic, h), mask)
    return num / den if den > 0 else num


# --- two-sample distances -----------------------------------------------------

def _directions(dim, n_proj, seed):
    """Uniform directions from scrambled Sobol points pushed through the normal
    quantile. Each direction is marginally uniform on the sphere; the set is
    stratified, so the projection average has far less seed-to-seed spread than
    i.i.d. draws."""
    import warnings

    from scipy.special import ndtri
    from scipy.stats import qmc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two n_proj
        u = qmc.Sobol(dim, scramble=True, seed=seed).random(n_proj)
    th = ndtri(np.clip(u, 1e-15, 1 - 1e-15))
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def _w1_1d(a, b):
    if len(a) == len(b):
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    from scipy.stats import wasserstein_distance
    return float(wasserstein_distance(a, b))


def sliced_w1(a, b, n_proj=128, seed=0):
    """Mean over ``n_proj`` uniform directions of the 1-D W1 between projections."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    th = _directions(a.shape[1], n_proj, seed)
    pa, pb = a @ th.T, b @ th.T
    return float(np.mean([_w1_1d(pa[:, k], pb[:, k]) for k in range(n_proj)]))


def energy_distance(a, b):
    """Two-sample V-statistic ``2 E|X-Y| - E|X-X'| - E|Y-Y'|``."""
    e_ab = kernels.mean_pairwise_distance(a, b)
    e_aa = kernels.mean_pairwise_distance(a, a)
    e_bb = kernels.mean_pairwise_distance(b, b)
    return max(0.0, 2.0 * e_ab - e_aa - e_bb)


@dataclass
class DistanceReport:
    sliced_w1: float
    energy: float
    n_proj: int
    seed: int
    n_a: int
    n_b: int
    baseline_sliced_w1: float = None
    baseline_energy: float = None
    factor: float = PASS_FACTOR
    label: str = ""

    @property
    def passed(self):
        if self.baseline_sliced_w1 is None:
            return None
        return (self.sliced_w1 <= self.factor * self.baseline_sliced_w1
                and self.energy <= self.factor * self.baseline_energy)

    def to_dict(self):
        return {"label": self.label, "sliced_w1": self.sliced_w1, "energy": self.energy,
                "n_proj": self.n_proj, "seed": self.seed, "n_a": self.n_a, "n_b": self.n_b,
                "baseline_sliced_w1": self.baseline_sliced_w1,
                "baseline_energy": self.baseline_energy, "factor": self.factor,
                "passed": self.passed}


def _check_samples(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DomainError(f"{name} must be an (n, d) array")
    if len(x) < 100:
        raise DomainError(f"{name} has {len(x)} points; at least 100 needed")
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name} contains non-finite values")
    return x


def marginal_distance(a, b, n_proj=128, seed=0, path=None, t=None, n_baseline=3):
    """Sliced-W1 and energy distance between two point sets.

    With ``path`` and ``t`` the report also carries a calibration baseline:
    the same statistics between pairs of fresh exact samples of sizes
    ``(len(a), len(b))``, averaged over ``n_baseline`` replicates.
    """
    a = _check_samples(a, "samples_a")
    b = _check_samples(b, "samples_b")
    if a.shape[1] != b.shape[1]:
        raise DomainError("sample sets differ in dimension")
    rep = DistanceReport(sliced_w1(a, b, n_proj, seed), energy_distance(a, b), n_proj, seed,
                         len(a), len(b))
    if path is not None:
        sw, en = [], []
        for r in range(n_baseline):
            xa = path.sample(t, len(a), [seed, 1, r])
            xb = path.sample(t, len(b), [seed, 2, r])
            sw.append(sliced_w1(xa, xb, n_proj, seed))
            en.append(energy_distance(xa, xb))
        rep.baseline_sliced_w1 = float(np.mean(sw))
        rep.baseline_energy = float(np.mean(en))
    return rep


def marginal_invariance_suite(path, bundles, cfg, times, n_proj=128, labels=None):
    """Simulate every bundle's assembled SDE from exact ``p(., t0)`` and compare each
    snapshot against exact samples. Bundle ``i`` uses seed ``cfg.seed + i``."""
    from dataclasses import replace

    for bnd in bundles:
        if bnd.path.dim != path.dim:
            raise DomainError("bundles must share the path dimension")
    reports = []
    for i, bnd in enumerate(bundles):
        sde = assemble_drift(bnd)
        sub = replace(cfg, seed=cfg.seed + i)
        ens = simulate_ensemble(sde, lambda n, s: path.sample(cfg.t0, n, [s, 7]), sub, times)
        for t in times:
            sim_pts = snapshot(ens, t)
            exact = path.sample(t, cfg.n_paths, [sub.seed, 11])
            rep = marginal_distance(sim_pts, exact, n_proj, sub.seed, path, t)
            rep.label = f"{labels[i] if labels else i}@t={fmt_float(t)}"
            reports.append(rep)
    return reports


def reports_to_json(reports, path=None, **extra):
    payload = dict(extra)
    payload["reports"] = [r.to_dict() for r in reports]
    payload["all_passed"] = all(r.passed is not False for r in reports)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
