"""Turn a JSON run configuration into library objects.

Top-level keys: ``schema_version``, ``density``, ``grid``, ``D``, ``Q``,
``sde``, ``sim``, ``verify``, ``probes``, ``output``. Missing required
objects raise :class:`ConfigError` with code ``CONFIG_MISSING`` and the
offending field name.
"""

import copy
import hashlib
import json

import numpy as np

from . import decomp, density, fields
from .errors import ConfigError
from .grid import RegularGrid, read_mflo
from .schedules import Schedule

SCHEMA_VERSION = 1


def load(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", code="CONFIG_PARSE") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}", code="CONFIG_IO") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}", field="schema_version",
                          code="CONFIG_VERSION")
    return cfg


def config_hash(cfg):
    """sha256 of the canonical JSON form, ignoring the output directory."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def require(obj, key, where=None):
    if not isinstance(obj, dict) or key not in obj:
        name = f"{where}.{key}" if where else key
        raise ConfigError(f"config is missing {name!r}", field=name, code="CONFIG_MISSING")
    return obj[key]


# --- densities ----------------------------------------------------------------

def _t_range(spec):
    return tuple(spec.get("t_range", (0.0, 1.0)))


def build_density(spec):
    kind = require(spec, "kind", "density")
    tr = _t_range(spec)
    if kind == "heat-flow":
        return density.heat_flow_path(int(require(spec, "dim", "density")),
                                      spec.get("rate", 1.0), tr)
    if kind == "stationary":
        return density.stationary_gaussian_path(int(require(spec, "dim", "density")), tr)
    if kind == "gaussian":
        return density.make_gaussian_path(density.GaussianPathParams(
            Schedule.from_config(require(spec, "mean", "density")),
            Schedule.from_config(require(spec, "cov", "density")), tr))
    if kind == "mixture":
        comps = [density.GaussianPathParams(
            Schedule.from_config(require(c, "mean", "density.components")),
            Schedule.from_config(require(c, "cov", "density.components")), tr)
            for c in require(spec, "components", "density")]
        weights = spec.get("weights", [1.0 / len(comps)] * len(comps))
        return density.make_mixture_path(density.MixturePathParams(comps, weights, tr))
    if kind == "edm":
        return density.make_edm_path(edm_params(spec))
    raise ConfigError(f"unknown density kind {kind!r}", field="density.kind")


def edm_params(spec):
    return density.EdmScheduleParams(
        Schedule.from_config(spec.get("scale", 1.0)),
        Schedule.from_config(require(spec, "sigma", "density")),
        np.asarray(require(spec, "atoms", "density"), dtype=float),
        spec.get("weights"), _t_range(spec))


def analytic_phi(spec):
    """Closed-form ``phi`` for the families that have one, else ``None``."""
    kind = spec.get("kind")
    if kind == "heat-flow":
        return decomp.AnalyticPhi.constant(-0.5 * spec.get("rate", 1.0))
    if kind == "stationary":
        return decomp.AnalyticPhi.constant(0.0)
    if kind == "edm" and spec.get("scale", 1.0) == 1.0:
        params = edm_params(spec)
        t1 = params.t_range[1]
        # forward-time phi is minus the reversed one at s = T - t
        return decomp.AnalyticPhi.constant(
            lambda t: -decomp.analytic_phi_edm(params, t1 - t, t1))
    return None


# --- grids and fields ---------------------------------------------------------

def build_grid(spec, path=None, t=None):
    if spec.get("fit"):
        if path is None:
            raise ConfigError("grid.fit needs a density", field="density", code="CONFIG_MISSING")
        return density.fit_grid(path, t, require(spec, "n", "grid"),
                                spec.get("boundary_tol", 1e-10))
    if "half_width" in spec:
        return RegularGrid.cube(int(require(spec, "dim", "grid")), spec["half_width"],
                                require(spec, "n", "grid"))
    return RegularGrid(require(spec, "lower", "grid"), require(spec, "upper", "grid"),
                       require(spec, "n", "grid"))


def grid_times(spec):
    return [float(v) for v in np.atleast_1d(spec.get("t", 0.5))]


def build_field(spec, dim, role, where):
    if spec is None:
        return fields.zero_field(dim, role)
    kind = require(spec, "kind", where)
    declared = spec.get("role", role)
    if declared != role:
        raise ConfigError(f"{where} is declared {declared!r} but used as {role!r}",
                          field=f"{where}.role", code="CONFIG_ROLE")
    params = spec.get("params", {})
    if kind == "zero":
        return fields.zero_field(dim, role)
    if kind == "constant":
        M = params.get("matrix")
        if M is None:
            M = params.get("scale", 1.0) * np.eye(dim)
        return fields.make_constant_field(M, role)
    if kind == "rotation":
        J = np.zeros((dim, dim))
        i, j = params.get("axes", (0, 1))
        J[i, j], J[j, i] = params.get("rate", 1.0), -params.get("rate", 1.0)
        return fields.make_constant_field(J, role)
    if kind == "radial":
        return fields.make_radial_isotropic_field(params.get("a", 1.0), params.get("b", 0.0),
                                                  dim, role)
    if kind == "linear":
        return fields.LinearField(params.get("const", np.zeros((dim, dim))),
                                  require(params, "slopes", f"{where}.params"), role)
    raise ConfigError(f"unknown field kind {kind!r}", field=f"{where}.kind")


# --- phi, bundles and SDEs ----------------------------------------------------

class Context:
    """Lazily resolved objects shared between config sections."""

    def __init__(self, cfg, solver="fourier"):
        self.cfg = cfg
        self.solver = "fourier" if solver == "both" else solver
        self._path = None

    @property
    def density_spec(self):
        return require(self.cfg, "density")

    @property
    def path(self):
        if self._path is None:
            self._path = build_density(self.density_spec)
        return self._path

    @property
    def dim(self):
        return self.path.dim

    def grid(self, t=None):
        spec = require(self.cfg, "grid")
        return build_grid(spec, self.path, grid_times(spec)[0] if t is None else t)

    def field(self, spec, role, where):
        return build_field(spec, self.dim, role, where)

    def phi(self, spec):
        """``spec`` is ``"analytic"``, ``"grid"``, a number, or an object with
        ``source`` in {analytic, grid, file, constant}."""
        if spec is None:
            spec = "analytic" if analytic_phi(self.density_spec) else "grid"
        if isinstance(spec, (int, float)):
            return decomp.AnalyticPhi.constant(float(spec))
        if isinstance(spec, str):
            spec = {"source": spec}
        source = require(spec, "source", "phi")
        if source == "constant":
            return decomp.AnalyticPhi.constant(float(require(spec, "value", "phi")))
        if source == "analytic":
            phi = analytic_phi(self.density_spec)
            if phi is None:
                raise ConfigError("no closed-form phi for this density; use source 'grid'",
                                  field="phi.source")
            return phi
        if source == "grid":
            times = spec.get("times")
            if times is None:
                times = grid_times(require(self.cfg, "grid"))
            elif isinstance(times, dict):
                times = np.linspace(times["start"], times["stop"], int(times["num"]))
            grid = self.grid(float(np.atleast_1d(times)[0]))
            return decomp.grid_phi_from_path(self.path, grid, times,
                                             spec.get("solver", self.solver))
        if source == "file":
            slices = []
            for item in require(spec, "files", "phi"):
                slices.append((float(require(item, "t", "phi.files")),
                               read_mflo(require(item, "phi", "phi.files"), "phi"),
                               read_mflo(require(item, "grad_phi", "phi.files"), "grad_phi")))
            return decomp.GridPhi(slices)
        raise ConfigError(f"unknown phi source {source!r}", field="phi.source")

    def bundle(self, spec=None):
        spec = spec or {}
        D = self.field(spec.get("D", self.cfg.get("D")), "psd", "D")
        Q = self.field(spec.get("Q", self.cfg.get("Q")), "skew", "Q")
        return decomp.DecompositionBundle(self.path, self.phi(spec.get("phi")), D, Q)

    def sde(self, spec=None):
        """Resolve an ``sde`` object; returns ``(SdeSpec, path of its marginals)``."""
        spec = require(self.cfg, "sde") if spec is None else spec
        kind = require(spec, "kind", "sde")
        if kind == "builtin":
            return self._builtin(spec), (self.path if "density" in self.cfg else None)
        if kind == "assembled":
            bnd = self.bundle(spec)
            return decomp.assemble_drift(bnd, spec.get("omit", ())), self.path
        if kind == "matched":
            base, path = self.sde(require(spec, "base", "sde"))
            D = self.field(spec.get("D", self.cfg.get("D")), "psd", "D")
            Q = self.field(spec.get("Q", self.cfg.get("Q")), "skew", "Q")
            return decomp.sde_match(base, path, D, Q), path
        if kind == "reversed":
            base, path = self.sde(require(spec, "base", "sde"))
            T = float(spec.get("T", path.t_range[1]))
            if "D_bar" in spec or "Q_bar" in spec:
                D = self.field(spec.get("D_bar"), "psd", "D_bar")
                Q = self.field(spec.get("Q_bar"), "skew", "Q_bar")
                return decomp.weak_reversal_family(base, path, T, D, Q), path.reversed(T)
            return decomp.time_reverse_strict(base, path, T), path.reversed(T)
        if kind == "denoiser":
            dspec = self.density_spec
            if dspec.get("kind") != "edm":
                raise ConfigError("denoiser SDEs need an edm density", field="density.kind")
            params = edm_params(dspec)
            T = float(spec.get("T", params.t_range[1]))
            if "beta" in spec:
                D = decomp.karras_diffusion(params, T, spec["beta"])
            else:
                D = self.field(spec.get("D_bar"), "psd", "D_bar")
            Q = self.field(spec.get("Q_bar"), "skew", "Q_bar")
            sde = decomp.denoiser_family(params, T, D, Q)
            return sde, sde.info["path"]
        raise ConfigError(f"unknown sde kind {kind!r}", field="sde.kind")

    def _builtin(self, spec):
        name = require(spec, "name", "sde")
        d = int(spec.get("dim", self.dim if "density" in self.cfg else 0) or 0)
        if d < 1:
            raise ConfigError("builtin sde needs a dim", field="sde.dim", code="CONFIG_MISSING")
        tr = tuple(spec.get("t_range", (0.0, 1.0)))
        if name == "ou":
            return decomp.ou_sde(d, spec.get("rate", 1.0), spec.get("noise", 1.0), tr)
        if name == "heat-flow":
            sigma = fields.make_constant_field(0.5 * spec.get("rate", 1.0) * np.eye(d), "psd")
            return decomp.linear_sde(np.zeros((d, d)), None, sigma, tr)
        if name == "zero":
            return decomp.linear_sde(np.zeros((d, d)), None, fields.zero_field(d), tr)
        if name == "linear":
            sigma = spec.get("sigma", np.eye(d).tolist())
            return decomp.linear_sde(require(spec, "A", "sde"), spec.get("c"),
                                     fields.make_constant_field(sigma, "psd"), tr)
        raise ConfigError(f"unknown builtin sde {name!r}", field="sde.name")


def probe_points(spec, dim, default_times):
    """``(times, points)`` from a ``probes`` object: explicit ``points`` and
    ``times``, or ``random`` points drawn uniformly in ``[low, high]^d``."""
    times = [float(t) for t in spec.get("times", default_times)]
    if "points" in spec:
        pts = np.asarray(spec["points"], dtype=float).reshape(-1, dim)
    else:
        n = int(require(spec, "random", "probes"))
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        pts = rng.uniform(spec.get("low", -2.0), spec.get("high", 2.0), (n, dim))
    return times, pts


def resolved(cfg, **overrides):
    """Copy of ``cfg`` with command-line overrides folded in."""
    out = copy.deepcopy(cfg)
    if overrides.get("seed") is not None:
        out.setdefault("sim", {})["seed"] = int(overrides["seed"])
    if overrides.get("solver") is not None:
        out["solver"] = overrides["solver"]
    return out
