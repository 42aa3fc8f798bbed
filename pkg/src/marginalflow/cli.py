"""Command-line front end.

Exit codes: 0 success, 1 a verification failed, 2 configuration or I/O error.
Errors are printed to stderr as one JSON object ``{"code": ..., "message": ...}``.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from . import decomp, density, poisson, sim, verify
from .errors import ConfigError, MarginalFlowError
from .grid import fmt_float, write_grid_csv, write_mflo

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _outdir(cfg, args):
    out = args.out or cfg.get("output") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _dump(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


# --- solve-phi ----------------------------------------------------------------

def cmd_solve_phi(cfg, args):
    ctx = cfgmod.Context(cfg)
    path = ctx.path
    gspec = cfgmod.require(cfg, "grid")
    t = cfgmod.grid_times(gspec)[0]
    grid = ctx.grid(t)
    out = _outdir(cfg, args)
    solvers = ["fourier", "green"] if args.solver == "both" else [args.solver or "fourier"]
    report = {"config_hash": cfgmod.config_hash(cfg), "t": t, "grid": grid.to_dict(),
              "validation": density.validate_density(path, grid, t).to_dict(), "solvers": {}}
    p = None
    results = {}
    for name in solvers:
        start = time.perf_counter()
        u, phi, gphi = poisson.solve_phi(path, grid, t, name)
        elapsed = time.perf_counter() - start
        if p is None:
            from .grid import sample_on_grid
            p = sample_on_grid(path, grid, t, "p")
        mask = poisson.high_density_mask(p)
        results[name] = (u, phi, gphi)
        report["solvers"][name] = {
            "seconds": elapsed,
            "max_abs_phi": float(np.abs(phi.values[mask]).max()),
            "mean_phi": float(phi.values[mask].mean()),
        }
    if len(solvers) == 2:
        mask = poisson.high_density_mask(p)
        (_, pf, gf), (_, pg, gg) = results["fourier"], results["green"]
        report["cross_solver_rel_l2"] = poisson.rel_l2(pg.values, pf.values, mask)
        report["cross_solver_grad_max_abs"] = float(np.abs(gg.values - gf.values)[:, mask].max())
    primary = solvers[0]
    u, phi, gphi = results[primary]
    write_mflo(os.path.join(out, "phi.mflo"), phi)
    write_mflo(os.path.join(out, "u.mflo"), u)
    write_mflo(os.path.join(out, "grad_phi.mflo"), gphi)
    if len(solvers) == 2:
        _, phi_g, gphi_g = results["green"]
        write_mflo(os.path.join(out, "phi_green.mflo"), phi_g)
        write_mflo(os.path.join(out, "grad_phi_green.mflo"), gphi_g)
    if cfg.get("csv"):
        write_grid_csv(os.path.join(out, "phi.csv"), phi)
    report["primary_solver"] = primary
    report["max_abs_phi"] = report["solvers"][primary]["max_abs_phi"]
    _dump(os.path.join(out, "report.json"), report)
    return EXIT_OK


# --- simulate -----------------------------------------------------------------

def _sim_config(spec, seed=None):
    try:
        return sim.SimConfig(dt=float(spec["dt"]), t0=float(spec.get("t0", 0.0)),
                             t1=float(spec["t1"]), n_paths=int(spec["n_paths"]),
                             seed=int(spec.get("seed", 0) if seed is None else seed),
                             policy=spec.get("policy", "error"))
    except KeyError as exc:
        field = f"sim.{exc.args[0]}"
        raise ConfigError(f"config is missing {field!r}", field=field,
                          code="CONFIG_MISSING") from None


def _initial_points(spec, path, scfg, dim):
    init = spec.get("init", "exact")
    if init == "exact":
        if path is None:
            raise ConfigError("init 'exact' needs a density", field="density",
                              code="CONFIG_MISSING")
        return lambda n, seed: density.sample_exact(path, scfg.t0, n, [seed, 7])
    if init == "zeros":
        return np.zeros((scfg.n_paths, dim))
    pts = np.asarray(init, dtype=float)
    if pts.ndim == 1:
        pts = np.broadcast_to(pts, (scfg.n_paths, dim))
    return pts


def cmd_simulate(cfg, args):
    ctx = cfgmod.Context(cfg, args.solver or "fourier")
    spec = cfgmod.require(cfg, "sim")
    sde, path = ctx.sde()
    scfg = _sim_config(spec, args.seed)
    times = [float(t) for t in spec.get("snapshot_times", [scfg.t1])]
    init = _initial_points(spec, path, scfg, sde.dim)
    chash = cfgmod.config_hash(cfg)
    ens = sim.simulate_ensemble(sde, init, scfg, times, extra_meta=chash)
    out = _outdir(cfg, args)
    sim.write_snapshots_csv(ens, os.path.join(out, "snapshots.csv"))
    moments = []
    for t in ens.times:
        m, C = sim.moments(sim.snapshot(ens, t))
        moments.append({"t": t, "mean": np.atleast_1d(m).tolist(),
                        "cov": np.atleast_2d(C).tolist()})
    sim.write_ensemble_json(ens, os.path.join(out, "ensemble.json"),
                            {"run_config_hash": chash, "moments": moments})
    return EXIT_OK


# --- verify -------------------------------------------------------------------

def _default_tolerance(dim):
    return 1e-2 if dim <= 2 else 5e-2


def cmd_verify(cfg, args):
    ctx = cfgmod.Context(cfg, args.solver or "fourier")
    path = ctx.path
    vspec = cfg.get("verify", {})
    t = float(vspec.get("t", cfgmod.grid_times(cfgmod.require(cfg, "grid"))[0]))
    grid = ctx.grid(t)
    tol = float(vspec.get("residual_tolerance", _default_tolerance(path.dim)))
    bundle_specs = vspec.get("bundles")
    if bundle_specs is None:
        if "D" not in cfg and "Q" not in cfg and "sde" not in cfg:
            raise ConfigError("verify needs at least one bundle", field="verify.bundles",
                              code="CONFIG_MISSING")
        bundle_specs = [{}] if ("D" in cfg or "Q" in cfg) else []
    chash = cfgmod.config_hash(cfg)
    out = _outdir(cfg, args)

    residuals = []
    for i, bspec in enumerate(bundle_specs):
        bspec = dict(bspec)
        bspec.setdefault("phi", "grid")
        bnd = ctx.bundle(bspec)
        sde = decomp.assemble_drift(bnd, bspec.get("omit", ()))
        rep = verify.fokker_planck_residual(sde, path, grid, t, tol)
        entry = rep.to_dict()
        entry["label"] = bspec.get("label", f"bundle{i}")
        entry["omit"] = list(bspec.get("omit", ()))
        residuals.append(entry)
    if "sde" in cfg:
        sde, spath = ctx.sde()
        rep = verify.fokker_planck_residual(sde, spath, grid, t, tol)
        entry = rep.to_dict()
        entry["label"] = "sde"
        residuals.append(entry)
    validation = density.validate_density(path, grid, t).to_dict()
    res_ok = all(r["passed"] for r in residuals)
    _dump(os.path.join(out, "residual_report.json"),
          {"config_hash": chash, "validation": validation, "residuals": residuals,
           "all_passed": res_ok})

    inv_ok = True
    ispec = vspec.get("invariance")
    if ispec is not None:
        scfg = _sim_config(ispec, args.seed)
        times = [float(v) for v in ispec.get("times", [scfg.t1])]
        specs = ispec.get("bundles", bundle_specs)
        bundles = [ctx.bundle(dict(b)) for b in specs]
        labels = [b.get("label", f"bundle{i}") for i, b in enumerate(specs)]
        reports = verify.marginal_invariance_suite(path, bundles, scfg, times,
                                                   int(ispec.get("n_proj", 128)), labels)
        inv_ok = all(r.passed for r in reports)
        verify.reports_to_json(reports, os.path.join(out, "invariance_report.json"),
                               config_hash=chash, seed=scfg.seed)
    return EXIT_OK if res_ok and inv_ok else EXIT_FAIL


# --- reverse / match ----------------------------------------------------------

def _drift_table(sde, times, pts):
    rows = []
    for t in times:
        b = sde.drift(pts, t)
        for x, v in zip(pts, b):
            rows.append((t, x, v))
    return rows


def _write_table(path, rows, dim):
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + [f"x{i + 1}" for i in range(dim)]
                          + [f"b{i + 1}" for i in range(dim)]) + "\n")
        for t, x, v in rows:
            fh.write(",".join(fmt_float(a) for a in [t, *x, *v]) + "\n")


def _probes(cfg, sde):
    spec = cfgmod.require(cfg, "probes")
    t0, t1 = sde.t_range
    return cfgmod.probe_points(spec, sde.dim, [t0, 0.5 * (t0 + t1), t1])


def cmd_reverse(cfg, args):
    ctx = cfgmod.Context(cfg, args.solver or "fourier")
    spec = cfgmod.require(cfg, "sde")
    out = _outdir(cfg, args)
    report = {"config_hash": cfgmod.config_hash(cfg)}
    status = EXIT_OK
    if spec.get("kind") == "denoiser":
        rev, rpath = ctx.sde()
        times, pts = _probes(cfg, rev)
        params = cfgmod.edm_params(ctx.density_spec)
        T = rev.info["T"]
        report["score_coefficient"] = [
            {"s": s, "phi": decomp.analytic_phi_edm(params, s, T)} for s in times]
    else:
        fwd, path = ctx.sde()
        T = float(cfg.get("reverse", {}).get("T", spec.get("T", path.t_range[1])))
        rspec = cfg.get("reverse", {})
        if "D_bar" in rspec or "Q_bar" in rspec:
            rev = decomp.weak_reversal_family(
                fwd, path, T, ctx.field(rspec.get("D_bar"), "psd", "D_bar"),
                ctx.field(rspec.get("Q_bar"), "skew", "Q_bar"))
        else:
            rev = decomp.time_reverse_strict(fwd, path, T)
        times, pts = _probes(cfg, rev)
        report["T"] = T
        if args.check_involution:
            back = decomp.time_reverse_strict(rev, path.reversed(T), T)
            dev = max(float(np.abs(back.drift(pts, t) - fwd.drift(pts, t)).max())
                      for t in cfgmod.probe_points(cfg["probes"], fwd.dim,
                                                   [fwd.t_range[0], fwd.t_range[1]])[0])
            report["involution_max_abs"] = dev
            report["involution_passed"] = dev <= 1e-12
            if dev > 1e-12:
                status = EXIT_FAIL
    _write_table(os.path.join(out, "drift_table.csv"), _drift_table(rev, times, pts), rev.dim)
    _dump(os.path.join(out, "report.json"), report)
    return status


def cmd_match(cfg, args):
    ctx = cfgmod.Context(cfg, args.solver or "fourier")
    base, path = ctx.sde()
    D = ctx.field(cfg.get("D"), "psd", "D")
    Q = ctx.field(cfg.get("Q"), "skew", "Q")
    matched = decomp.sde_match(base, path, D, Q)
    times, pts = _probes(cfg, base)
    out = _outdir(cfg, args)
    _write_table(os.path.join(out, "input_drift_table.csv"), _drift_table(base, times, pts),
                 base.dim)
    _write_table(os.path.join(out, "drift_table.csv"), _drift_table(matched, times, pts),
                 base.dim)
    _dump(os.path.join(out, "report.json"), {"config_hash": cfgmod.config_hash(cfg)})
    return EXIT_OK


COMMANDS = {
    "solve-phi": cmd_solve_phi,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "reverse": cmd_reverse,
    "match": cmd_match,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="marginalflow",
        description="Construct, transform and verify SDEs with prescribed marginals.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--solver", choices=["fourier", "green", "both"])
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--out", help="output directory (overrides config 'output')")
        p.add_argument("--check-involution", action="store_true",
                       help="reverse: also check that reversing twice is the identity")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.resolved(cfgmod.load(args.config), seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except MarginalFlowError as exc:
        print(json.dumps(exc.to_dict(), default=_jsonable), file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(json.dumps({"code": "IO", "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
