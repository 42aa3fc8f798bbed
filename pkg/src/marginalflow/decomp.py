"""Drift assembly from ``(phi, D, Q, p)`` and the marginal-preserving transforms.

Drifts are lazy closures over their ingredients, so transforms chain without
re-sampling anything on a grid. Every drift takes ``x`` of shape ``(..., d)``
and a scalar time.
"""

from dataclasses import dataclass, field

import numpy as np

from .density import make_edm_path
from .errors import ConstructionError, DomainError, OutOfDomainError
from .fields import ConstantField, MatrixField, ScaledField, require_role, time_reversed
from .grid import interpolate
from .poisson import solve_phi

TERMS = ("phi_score", "grad_phi", "d_score", "q_score", "div_d", "div_q")
TERM_GROUPS = {"dq_score": ("d_score", "q_score"), "div_dq": ("div_d", "div_q")}


@dataclass(frozen=True)
class SdeSpec:
    """``dx = drift(x, t) dt + sqrt(2 diffusion(x, t)) dw``."""

    dim: int
    t_range: tuple
    drift: object
    diffusion: MatrixField
    provenance: str = "user"
    domain: tuple = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        require_role(self.diffusion, "psd", "diffusion")
        if self.diffusion.dim != self.dim:
            raise ConstructionError("diffusion dimension does not match the SDE")

    def __call__(self, x, t):
        return self.drift(x, t)


def make_sde(drift, diffusion, t_range=(0.0, 1.0), provenance="user", **info):
    return SdeSpec(diffusion.dim, tuple(t_range), drift, diffusion, provenance, info=info)


def linear_sde(A, c=None, diffusion=None, t_range=(0.0, 1.0)):
    """``f(x) = A x + c`` with a constant or given diffusion field."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    c = np.zeros(d) if c is None else np.asarray(c, dtype=float)
    diffusion = diffusion if diffusion is not None else ConstantField(np.eye(d), "psd")

    def drift(x, t):
        return np.asarray(x, dtype=float) @ A.T + c

    return make_sde(drift, diffusion, t_range, kind="linear", A=A.tolist(), c=c.tolist())


def ou_sde(dim, rate=1.0, noise=1.0, t_range=(0.0, 1.0)):
    """``dx = -rate x dt + sqrt(2 noise) dw``; stationary law ``N(0, noise/rate I)``."""
    return linear_sde(-rate * np.eye(dim), None, ConstantField(noise * np.eye(dim), "psd"),
                      t_range)


# --- phi sources --------------------------------------------------------------

class AnalyticPhi:
    """Closed-form ``phi(x, t)`` with gradient (zero when not given)."""

    def __init__(self, value_fn, grad_fn=None):
        self._value = value_fn
        self._grad = grad_fn
        self.domain = None

    @classmethod
    def constant(cls, c):
        """Spatially constant ``phi``; ``c`` is a number or a function of ``t``."""
        fn = c if callable(c) else (lambda t: c)
        return cls(lambda x, t: np.full(np.asarray(x).shape[:-1], float(fn(t))))

    def value(self, x, t):
        return self._value(x, t)

    def grad(self, x, t):
        if self._grad is None:
            return np.zeros(np.asarray(x).shape)
        return self._grad(x, t)


class GridPhi:
    """``phi`` and ``grad phi`` sampled on a grid at one or more times.

    Between slices the fields are interpolated linearly in time; a single
    slice is only valid at its own time.
    """

    def __init__(self, slices, time_tol=1e-9):
        slices = sorted(slices, key=lambda s: s[0])
        if not slices:
            raise ConstructionError("GridPhi needs at least one slice")
        grid = slices[0][1].grid
        if any(s[1].grid != grid or s[2].grid != grid for s in slices):
            raise ConstructionError("all grid-phi slices must share a grid")
        self.times = np.array([s[0] for s in slices], dtype=float)
        self.phis = [s[1] for s in slices]
        self.grads = [s[2] for s in slices]
        self.grid = grid
        self.domain = grid.hull
        self.time_tol = time_tol

    def _bracket(self, t):
        ts = self.times
        if t < ts[0] - self.time_tol or t > ts[-1] + self.time_tol:
            raise DomainError(f"t={t} outside grid-phi slices [{ts[0]}, {ts[-1]}]")
        if len(ts) == 1:
            return 0, 0, 0.0
        k = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        w = float(np.clip((t - ts[k]) / (ts[k + 1] - ts[k]), 0.0, 1.0))
        return k, k + 1, w

    def _eval(self, fields, x, t):
        k0, k1, w = self._bracket(t)
        a = interpolate(fields[k0], x)
        if w == 0.0:
            return a
        return (1.0 - w) * a + w * interpolate(fields[k1], x)

    def value(self, x, t):
        return self._eval(self.phis, x, t)

    def grad(self, x, t):
        return self._eval(self.grads, x, t)


def grid_phi_from_path(path, grid, times, solver="fourier"):
    slices = []
    for t in np.atleast_1d(times):
        _, phi, gphi = solve_phi(path, grid, float(t), solver)
        slices.append((float(t), phi, gphi))
    return GridPhi(slices)


# --- assembly -----------------------------------------------------------------

@dataclass
class DecompositionBundle:
    path: object
    phi: object
    D: MatrixField
    Q: MatrixField

    def __post_init__(self):
        require_role(self.D, "psd", "D")
        require_role(self.Q, "skew", "Q")
        if not (self.path.dim == self.D.dim == self.Q.dim):
            raise ConstructionError("path, D and Q dimensions disagree")
        grid = getattr(self.phi, "grid", None)
        if grid is not None and grid.dim != self.path.dim:
            raise ConstructionError("grid-phi dimension does not match the path")


def _expand_omit(omit):
    out = set()
    for name in omit:
        if name in TERM_GROUPS:
            out.update(TERM_GROUPS[name])
        elif name in TERMS:
            out.add(name)
        else:
            raise ValueError(f"unknown drift term {name!r}; choose from {TERMS + tuple(TERM_GROUPS)}")
    return out


def drift_terms(bundle, x, t):
    """Each term of the assembled drift, keyed by name."""
    x = np.asarray(x, dtype=float)
    score = bundle.path.score(x, t)
    phi = bundle.phi.value(x, t)
    return {
        "phi_score": phi[..., None] * score,
        "grad_phi": bundle.phi.grad(x, t),
        "d_score": np.einsum("...ij,...j->...i", bundle.D.value(x, t), score),
        "q_score": np.einsum("...ij,...j->...i", bundle.Q.value(x, t), score),
        "div_d": bundle.D.divergence(x, t),
        "div_q": bundle.Q.divergence(x, t),
    }


def assemble_drift(bundle, omit=()):
    """``b = phi grad log p + grad phi + (D + Q) grad log p + div(D + Q)``, noise ``D``.

    ``omit`` drops named terms (see ``TERMS``; ``dq_score`` and ``div_dq``
    drop both halves) for ablation studies.
    """
    skip = _expand_omit(omit)
    keep = [n for n in TERMS if n not in skip]

    def drift(x, t):
        terms = drift_terms(bundle, x, t)
        out = np.zeros(np.asarray(x).shape)
        for name in keep:
            out = out + terms[name]
        return out

    return SdeSpec(bundle.path.dim, bundle.path.t_range, drift, bundle.D, "assembled",
                   domain=getattr(bundle.phi, "domain", None),
                   info={"omitted": sorted(skip)})


# --- transforms ---------------------------------------------------------------

def sde_match(sde, path, newD, newQ):
    """Same marginals, new diffusion ``newD`` and circulation ``newQ``.

    ``b' = f + (D - Sigma + Q) grad log p + div(D - Sigma + Q)``.
    """
    require_role(newD, "psd", "newD")
    require_role(newQ, "skew", "newQ")
    if not (sde.dim == path.dim == newD.dim == newQ.dim):
        raise ConstructionError("dimensions disagree")
    sigma = sde.diffusion

    def drift(x, t):
        x = np.asarray(x, dtype=float)
        M = newD.value(x, t) - sigma.value(x, t) + newQ.value(x, t)
        div = newD.divergence(x, t) - sigma.divergence(x, t) + newQ.divergence(x, t)
        return sde.drift(x, t) + np.einsum("...ij,...j->...i", M, path.score(x, t)) + div

    return SdeSpec(sde.dim, sde.t_range, drift, newD, "matched", domain=sde.domain)


def _reversed_range(t_range, T):
    return (T - t_range[1], T - t_range[0])


def time_reverse_strict(sde, path, T):
    """Reversal in ``s = T - t``: ``-f_bar + 2 div Sigma_bar + 2 Sigma_bar grad log p_bar``."""
    T = float(T)
    sigma_bar = time_reversed(sde.diffusion, T)
    p_bar = path.reversed(T)

    def drift(y, s):
        y = np.asarray(y, dtype=float)
        f_bar = sde.drift(y, T - s)
        S = sigma_bar.value(y, s)
        return (-f_bar + 2.0 * sigma_bar.divergence(y, s)
                + 2.0 * np.einsum("...ij,...j->...i", S, p_bar.score(y, s)))

    return SdeSpec(sde.dim, _reversed_range(sde.t_range, T), drift, sigma_bar, "reversed",
                   domain=sde.domain, info={"T": T})


def weak_reversal_family(sde, path, T, D_bar, Q_bar):
    """Every reversal that matches marginals only:
    ``-f_bar + (D_bar + Sigma_bar + Q_bar) grad log p_bar + div(...)``, noise ``D_bar``."""
    require_role(D_bar, "psd", "D_bar")
    require_role(Q_bar, "skew", "Q_bar")
    T = float(T)
    sigma_bar = time_reversed(sde.diffusion, T)
    p_bar = path.reversed(T)

    def drift(y, s):
        y = np.asarray(y, dtype=float)
        M = D_bar.value(y, s) + sigma_bar.value(y, s) + Q_bar.value(y, s)
        div = D_bar.divergence(y, s) + sigma_bar.divergence(y, s) + Q_bar.divergence(y, s)
        return -sde.drift(y, T - s) + np.einsum("...ij,...j->...i", M, p_bar.score(y, s)) + div

    return SdeSpec(sde.dim, _reversed_range(sde.t_range, T), drift, D_bar, "reversed",
                   domain=sde.domain, info={"T": T, "weak": True})


def _require_unit_scale(schedule, n=65):
    t0, t1 = schedule.t_range
    for t in np.linspace(t0, t1, n):
        if schedule.scale.value(t) != 1.0 or schedule.scale.deriv(t) != 0.0:
            raise ConstructionError(
                "denoiser family supports s(t) == 1 (variance-exploding form) only")


def analytic_phi_edm(schedule, s, T=None):
    """``phi(s) = -(d sigma_bar/ds) sigma_bar`` with ``sigma_bar(s) = sigma(T - s)``."""
    T = schedule.t_range[1] if T is None else float(T)
    t = T - s
    # d/ds sigma(T - s) = -sigma'(T - s)
    return float(schedule.sigma.deriv(t) * schedule.sigma.value(t))


def denoiser_family(schedule, T, D_bar, Q_bar):
    """Complete family of weak reversals of the mollified noising process."""
    require_role(D_bar, "psd", "D_bar")
    require_role(Q_bar, "skew", "Q_bar")
    _require_unit_scale(schedule)
    T = float(T)
    p_bar = make_edm_path(schedule).reversed(T)
    if not (p_bar.dim == D_bar.dim == Q_bar.dim):
        raise ConstructionError("dimensions disagree")

    def drift(y, s):
        y = np.asarray(y, dtype=float)
        score = p_bar.score(y, s)
        M = D_bar.value(y, s) + Q_bar.value(y, s)
        return (analytic_phi_edm(schedule, s, T) * score
                + np.einsum("...ij,...j->...i", M, score)
                + D_bar.divergence(y, s) + Q_bar.divergence(y, s))

    return SdeSpec(p_bar.dim, p_bar.t_range, drift, D_bar, "denoiser",
                   info={"T": T, "path": p_bar})


def karras_diffusion(schedule, T, beta):
    """``D_bar(s) = beta(s) sigma_bar(s)^2 I``; ``beta`` is a number or function of ``s``."""
    d = schedule.atoms.shape[1]
    beta_fn = beta if callable(beta) else (lambda s: float(beta))
    T = float(T)
    return ScaledField(ConstantField(np.eye(d), "psd"),
                       lambda s: beta_fn(s) * float(schedule.sigma.value(T - s)) ** 2)


def check_in_domain(sde, x):
    """Raise when points fall outside the SDE's grid domain (grid-phi bundles)."""
    if sde.domain is None:
        return
    lo, hi = sde.domain
    x = np.asarray(x)
    bad = np.any((x < lo) | (x > hi), axis=-1)
    if bad.any():
        raise OutOfDomainError(f"{int(bad.sum())} points outside the grid box")


__all__ = [
    "SdeSpec", "make_sde", "linear_sde", "ou_sde", "AnalyticPhi", "GridPhi",
    "grid_phi_from_path", "DecompositionBundle", "drift_terms", "assemble_drift",
    "sde_match", "time_reverse_strict", "weak_reversal_family", "analytic_phi_edm",
    "denoiser_family", "karras_diffusion", "TERMS",
]
