"""Closed-form time-dependent densities.

All families are (mixtures of) Gaussians whose moments follow schedules with
analytic time derivatives, so ``log p``, the score ``grad_x log p`` and
``d/dt p`` are available in closed form. Arrays of points have shape
``(..., d)``; time is always a Python scalar.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import ConstructionError, DomainError
from .schedules import Schedule

PD_FLOOR = 1e-10
_LOG_2PI = np.log(2.0 * np.pi)


def _seed_sequence(seed, *extra):
    # ``seed`` may itself be a sequence of integers (derived substreams)
    words = [int(v) % 2**64 for v in np.atleast_1d(seed)]
    for v in extra:
        if isinstance(v, float):
            words.append(struct.unpack("<Q", struct.pack("<d", v))[0])
        else:
            words.append(int(v) % 2**64)
    return np.random.SeedSequence(words)


class ScheduleComponent:
    """Gaussian ``N(m(t), S(t))`` with mean/covariance schedules."""

    def __init__(self, mean, cov):
        self.mean = mean
        self.cov = cov
        self.dim = mean.shape[0]
        if mean.shape != (self.dim,) or cov.shape != (self.dim, self.dim):
            raise ConstructionError(
                f"mean shape {mean.shape} and covariance shape {cov.shape} disagree")

    def moments(self, t):
        return self.mean.value(t), self.cov.value(t), self.mean.deriv(t), self.cov.deriv(t)

    def check_pd(self, times):
        for t in times:
            S = self.cov.value(t)
            scale = max(1.0, np.abs(S).max())
            if np.abs(S - S.T).max() > 1e-12 * scale:
                raise ConstructionError(f"covariance is not symmetric at t={t}")
            lam = np.linalg.eigvalsh(S).min()
            if not lam >= PD_FLOOR:
                raise ConstructionError(
                    f"covariance smallest eigenvalue {lam:.3e} below {PD_FLOOR} at t={t}")


class EdmComponent:
    """``N(s(t) x0, s(t)^2 sigma(t)^2 I)`` for one data atom."""

    def __init__(self, atom, scale, sigma):
        self.atom = np.asarray(atom, dtype=float)
        self.dim = self.atom.shape[0]
        self.scale = scale
        self.sigma = sigma

    def moments(self, t):
        s, ds = float(self.scale.value(t)), float(self.scale.deriv(t))
        sig, dsig = float(self.sigma.value(t)), float(self.sigma.deriv(t))
        if not (s > 0 and sig > 0):
            raise DomainError(
                f"mollified density degenerates at t={t}: s={s}, sigma={sig} (need both > 0)")
        eye = np.eye(self.dim)
        var = (s * sig) ** 2
        dvar = 2.0 * s * sig * (ds * sig + s * dsig)
        return s * self.atom, var * eye, ds * self.atom, dvar * eye

    def check_pd(self, times):
        pass


class _PathBase:
    dim: int
    t_range: tuple

    def prob(self, x, t):
        return np.exp(self.log_prob(x, t))

    def grad_prob(self, x, t):
        return self.prob(x, t)[..., None] * self.score(x, t)

    def dt_prob(self, x, t):
        return self.prob(x, t) * self.dt_log_prob(x, t)

    def reversed(self, T):
        return ReversedPath(self, T)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"points have dimension {x.shape[-1]}, path has {self.dim}")
        return x


class DensityPath(_PathBase):
    """Finite Gaussian mixture with time-dependent components.

    ``kind`` is one of ``gaussian``, ``mixture`` or ``edm``; a Gaussian path is
    the single-component case.
    """

    def __init__(self, kind, components, weights, t_range=(0.0, 1.0), params=None):
        if not components:
            raise ConstructionError("a density path needs at least one component")
        self.kind = kind
        self.components = list(components)
        self.dim = self.components[0].dim
        if any(c.dim != self.dim for c in self.components):
            raise ConstructionError("mixture components have different dimensions")
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(self.components),):
            raise ConstructionError("one weight per component required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConstructionError("mixture weights must be positive and sum to 1")
        self.weights = w
        self._log_w = np.log(w)
        self.t_range = (float(t_range[0]), float(t_range[1]))
        if not self.t_range[1] > self.t_range[0]:
            raise ConstructionError("empty time range")
        self.params = params or {}

    def __repr__(self):
        return f"DensityPath(kind={self.kind!r}, d={self.dim}, K={len(self.components)})"

    def _terms(self, x, t, need_dt=False):
        """Per-component log-density, ``S^-1 (x - m)`` and optional ``d/dt log N``."""
        logs, a_list, dts = [], [], []
        flat = x.reshape(-1, self.dim)
        for comp in self.components:
            m, S, dm, dS = comp.moments(t)
            try:
                cf = cho_factor(S, lower=True)
            except np.linalg.LinAlgError:
                raise DomainError(f"covariance not positive definite at t={t}") from None
            r = flat - m
            a = cho_solve(cf, r.T).T
            logdet = 2.0 * np.log(np.diag(cf[0])).sum()
            logs.append(-0.5 * (self.dim * _LOG_2PI + logdet + np.einsum("ni,ni->n", r, a)))
            a_list.append(a)
            if need_dt:
                tr = np.trace(cho_solve(cf, dS))
                dts.append(a @ dm + 0.5 * (np.einsum("ni,ij,nj->n", a, dS, a) - tr))
        return np.array(logs), a_list, (np.array(dts) if need_dt else None)

    def _responsibilities(self, logs):
        # log-space with max subtraction; tails would underflow otherwise
        wl = logs + self._log_w[:, None]
        lse = logsumexp(wl, axis=0)
        return lse, np.exp(wl - lse)

    def log_prob(self, x, t):
        x = self._points(x)
        logs, _, _ = self._terms(x, t)
        lse, _ = self._responsibilities(logs)
        return lse.reshape(x.shape[:-1])

    def score(self, x, t):
        x = self._points(x)
        logs, a_list, _ = self._terms(x, t)
        _, resp = self._responsibilities(logs)
        out = np.zeros((resp.shape[1], self.dim))
        for r_k, a in zip(resp, a_list):
            out -= r_k[:, None] * a
        return out.reshape(x.shape)

    def dt_log_prob(self, x, t):
        x = self._points(x)
        logs, _, dts = self._terms(x, t, need_dt=True)
        _, resp = self._responsibilities(logs)
        return (resp * dts).sum(axis=0).reshape(x.shape[:-1])

    def evaluate(self, x, t):
        """``(p, score, dt_p)`` in one pass."""
        x = self._points(x)
        logs, a_list, dts = self._terms(x, t, need_dt=True)
        lse, resp = self._responsibilities(logs)
        score = np.zeros((resp.shape[1], self.dim))
        for r_k, a in zip(resp, a_list):
            score -= r_k[:, None] * a
        p = np.exp(lse)
        dtp = p * (resp * dts).sum(axis=0)
        lead = x.shape[:-1]
        return p.reshape(lead), score.reshape(x.shape), dtp.reshape(lead)

    def moments(self, t):
        """List of per-component ``(mean, cov, d mean, d cov)`` at ``t``."""
        return [c.moments(t) for c in self.components]

    def sample(self, t, n, seed):
        """``n`` i.i.d. draws from ``p(., t)``; deterministic in ``(seed, t, n)``."""
        rng = np.random.default_rng(_seed_sequence(seed, float(t), n))
        n = int(n)
        K = len(self.components)
        labels = rng.choice(K, size=n, p=self.weights) if K > 1 else np.zeros(n, dtype=int)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            sel = labels == k
            if not sel.any():
                continue
            m, S, _, _ = comp.moments(t)
            L = np.linalg.cholesky(S)
            out[sel] = m + z[sel] @ L.T
        return out


class ReversedPath(_PathBase):
    """``p_bar(y, s) = p(y, T - s)``."""

    def __init__(self, base, T):
        self.base = base
        self.T = float(T)
        self.dim = base.dim
        self.kind = "reversed"
        t0, t1 = base.t_range
        self.t_range = (self.T - t1, self.T - t0)

    def __repr__(self):
        return f"ReversedPath({self.base!r}, T={self.T})"

    def log_prob(self, x, s):
        return self.base.log_prob(x, self.T - s)

    def score(self, x, s):
        return self.base.score(x, self.T - s)

    def dt_log_prob(self, x, s):
        return -self.base.dt_log_prob(x, self.T - s)

    def evaluate(self, x, s):
        p, score, dtp = self.base.evaluate(x, self.T - s)
        return p, score, -dtp

    def sample(self, s, n, seed):
        return self.base.sample(self.T - s, n, seed)

    def moments(self, s):
        return [(m, S, -dm, -dS) for m, S, dm, dS in self.base.moments(self.T - s)]

    def reversed(self, T):
        if float(T) == self.T:
            return self.base
        return ReversedPath(self, T)


# --- constructors -------------------------------------------------------------

@dataclass
class GaussianPathParams:
    mean: Schedule
    cov: Schedule
    t_range: tuple = (0.0, 1.0)


@dataclass
class MixturePathParams:
    components: list
    weights: list
    t_range: tuple = (0.0, 1.0)


@dataclass
class EdmScheduleParams:
    scale: Schedule
    sigma: Schedule
    atoms: np.ndarray
    weights: np.ndarray = None
    t_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if self.weights is None:
            self.weights = np.full(len(self.atoms), 1.0 / len(self.atoms))
        self.weights = np.asarray(self.weights, dtype=float)


def _check_times(t_range, n=257):
    return np.linspace(t_range[0], t_range[1], n)


def make_gaussian_path(params):
    comp = ScheduleComponent(params.mean, params.cov)
    comp.check_pd(_check_times(params.t_range))
    return DensityPath("gaussian", [comp], [1.0], params.t_range,
                       params={"mean": params.mean.description, "cov": params.cov.description})


def make_mixture_path(params):
    comps = []
    for cp in params.components:
        comp = ScheduleComponent(cp.mean, cp.cov)
        comp.check_pd(_check_times(params.t_range))
        comps.append(comp)
    return DensityPath("mixture", comps, params.weights, params.t_range)


def make_edm_path(params):
    comps = [EdmComponent(a, params.scale, params.sigma) for a in params.atoms]
    return DensityPath("edm", comps, params.weights, params.t_range,
                       params={"scale": params.scale.description,
                               "sigma": params.sigma.description})


def sample_exact(path, t, n, seed):
    t0, t1 = path.t_range
    if not (t0 - 1e-12 <= t <= t1 + 1e-12):
        raise DomainError(f"t={t} outside the path's time range {path.t_range}")
    return path.sample(t, n, seed)


def heat_flow_path(dim, rate=1.0, t_range=(0.0, 1.0)):
    """``N(0, (1 + rate t) I)``; solves ``dp/dt = (rate/2) lap p``."""
    eye = np.eye(dim)
    return make_gaussian_path(GaussianPathParams(
        Schedule.constant(np.zeros(dim)), Schedule.polynomial([eye, rate * eye]), t_range))


def stationary_gaussian_path(dim, t_range=(0.0, 1.0)):
    return make_gaussian_path(GaussianPathParams(
        Schedule.constant(np.zeros(dim)), Schedule.constant(np.eye(dim)), t_range))


# --- validation ---------------------------------------------------------------

@dataclass
class ValidationReport:
    t: float
    mass_error: float
    boundary_ratio: float
    dtp_mass: float
    mass_tol: float
    boundary_tol: float
    dtp_mass_tol: float
    notes: list = field(default_factory=list)

    @property
    def mass_ok(self):
        return self.mass_error <= self.mass_tol

    @property
    def boundary_ok(self):
        return self.boundary_ratio <= self.boundary_tol

    @property
    def dtp_mass_ok(self):
        return self.dtp_mass <= self.dtp_mass_tol

    @property
    def passed(self):
        return self.mass_ok and self.boundary_ok and self.dtp_mass_ok

    def to_dict(self):
        return {
            "t": self.t, "mass_error": self.mass_error, "boundary_ratio": self.boundary_ratio,
            "dtp_mass": self.dtp_mass,
            "thresholds": {"mass": self.mass_tol, "boundary": self.boundary_tol,
                           "dtp_mass": self.dtp_mass_tol},
            "flags": {"mass": self.mass_ok, "boundary": self.boundary_ok,
                      "dtp_mass": self.dtp_mass_ok},
            "passed": self.passed, "notes": list(self.notes),
        }


def _integrate(values, grid):
    out = values
    for h in grid.spacing:
        out = trapezoid(out, dx=h, axis=0)
    return float(out)


def validate_density(path, grid, t, mass_tol=1e-3, boundary_tol=1e-10, dtp_mass_tol=1e-4,
                     fields=()):
    """Check normalization and tail decay of ``path`` on the grid box at ``t``.

    ``fields`` may list matrix fields that will be used with the path; those
    that are unbounded in ``x`` are noted in the report, since the argument that
    every marginal-preserving drift has the assembled form needs bounded
    coefficients.
    """
    if grid.dim != path.dim:
        raise DomainError(f"grid dimension {grid.dim} does not match path dimension {path.dim}")
    pts = grid.points()
    p, _, dtp = path.evaluate(pts, t)
    p = p.reshape(grid.shape)
    dtp = dtp.reshape(grid.shape)
    edge = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[ax] = 0
        edge[tuple(idx)] = True
        idx[ax] = -1
        edge[tuple(idx)] = True
    pmax = p.max()
    report = ValidationReport(
        t=float(t),
        mass_error=abs(_integrate(p, grid) - 1.0),
        boundary_ratio=float(p[edge].max() / pmax) if pmax > 0 else float("inf"),
        dtp_mass=abs(_integrate(dtp, grid)),
        mass_tol=mass_tol, boundary_tol=boundary_tol, dtp_mass_tol=dtp_mass_tol,
    )
    for f in fields:
        if not getattr(f, "bounded", True):
            report.notes.append(
                f"field {f.kind}/{f.role} is unbounded in x; bounded-coefficient assumption "
                "of the converse decomposition does not hold")
    return report


def fit_grid(path, t, n, boundary_tol=1e-10, pad=0.25):
    """Smallest axis-aligned grid whose edges sit where every component has
    decayed below ``boundary_tol`` of its peak (plus ``pad`` standard deviations).

    The last node lands on the upper extent, so the node hull covers it.
    """
    from .grid import RegularGrid

    z = np.sqrt(2.0 * np.log(1.0 / boundary_tol)) + pad
    lo, hi = [], []
    for m, S, _, _ in path.moments(t):
        s = np.sqrt(np.diag(S))
        lo.append(m - z * s)
        hi.append(m + z * s)
    lo = np.min(lo, axis=0)
    hi = np.max(hi, axis=0)
    n = np.broadcast_to(np.asarray(n, dtype=int), lo.shape)
    h = (hi - lo) / (n - 1)
    return RegularGrid(lo, hi + h, n)
