"""Euler-Maruyama ensembles with counter-based noise.

The Gaussian increment for path ``i`` at step ``k`` is a pure function of
``(seed, i, k)``, and paths are advanced in fixed-size chunks, so results are
bit-identical for any worker count or scheduling order.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConstructionError, DomainError, NonFiniteError, OutOfDomainError
from .fields import psd_sqrt
from .grid import fmt_float

log = logging.getLogger(__name__)

POLICIES = ("error", "clamp-to-box", "absorb")
CHUNK = 4096


@dataclass
class SimConfig:
    dt: float
    t0: float
    t1: float
    n_paths: int
    seed: int = 0
    policy: str = "error"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConstructionError("dt must be positive")
        if not self.t1 > self.t0:
            raise ConstructionError("t1 must exceed t0")
        if self.dt > self.t1 - self.t0 + 1e-15:
            raise ConstructionError("dt exceeds the simulated time span")
        if int(self.n_paths) < 1:
            raise ConstructionError("need at least one path")
        if self.policy not in POLICIES:
            raise ConstructionError(f"policy must be one of {POLICIES}")
        self.n_paths = int(self.n_paths)
        self.seed = int(self.seed)

    @property
    def n_steps(self):
        return int(round((self.t1 - self.t0) / self.dt))

    def config_hash(self, extra=None):
        payload = asdict(self)
        if extra is not None:
            payload["extra"] = extra
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Ensemble:
    times: list
    requested_times: list
    points: list
    absorbed: list
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.points[0].shape[1]

    def index_of(self, t):
        for i, (ts, tr) in enumerate(zip(self.times, self.requested_times)):
            if abs(ts - t) <= 1e-9 * max(1.0, abs(t)) or abs(tr - t) <= 1e-9 * max(1.0, abs(t)):
                return i
        raise DomainError(f"no snapshot at t={t}; available times: {self.times}")


def _noise_factor(sigma, x, t, dt):
    return psd_sqrt(2.0 * sigma.value(x, t)) * np.sqrt(dt)


def step_euler_maruyama(sde, x, t, dt, noise):
    """One explicit step ``x + b dt + sqrt(2 Sigma) sqrt(dt) noise``; batched over rows."""
    x = np.asarray(x, dtype=float)
    out = x + sde.drift(x, t) * dt
    if not sde.diffusion.is_zero:
        S = _noise_factor(sde.diffusion, x, t, dt)
        out = out + np.einsum("...ij,...j->...i", S, np.asarray(noise, dtype=float))
    return out


def _run_chunk(sde, x, ids, cfg, snap_steps):
    n, d = x.shape
    alive = np.ones(n, dtype=bool)
    clamped = np.zeros(n, dtype=np.int64)
    snaps = {}
    sigma = sde.diffusion
    const_factor = None
    if sigma.is_constant and not sigma.is_zero:
        const_factor = psd_sqrt(2.0 * sigma.value(np.zeros(d), cfg.t0))
    lo, hi = sde.domain if sde.domain is not None else (None, None)
    sqdt = np.sqrt(cfg.dt)
    if 0 in snap_steps:
        snaps[0] = (x.copy(), ~alive)
    for k in range(cfg.n_steps):
        t = cfg.t0 + k * cfg.dt
        idx = np.flatnonzero(alive)
        xa = x[idx]
        if lo is not None:
            outside = np.any((xa < lo) | (xa > hi), axis=1)
            if outside.any():
                if cfg.policy == "error":
                    raise OutOfDomainError(
                        f"{int(outside.sum())} paths left the grid box at t={t:.6g}")
                if cfg.policy == "absorb":
                    alive[idx[outside]] = False
                    idx = idx[~outside]
                    xa = xa[~outside]
                else:
                    clamped[idx[outside]] += 1
                    xa = np.clip(xa, lo, hi)
        if idx.size:
            new = xa + sde.drift(xa, t) * cfg.dt
            if not sigma.is_zero:
                z = kernels.counter_normals(cfg.seed, ids[idx], k, d)
                if const_factor is not None:
                    new = new + (z @ const_factor.T) * sqdt
                else:
                    S = _noise_factor(sigma, xa, t, cfg.dt)
                    new = new + np.einsum("nij,nj->ni", S, z)
            bad = ~np.all(np.isfinite(new), axis=1)
            if bad.any():
                if cfg.policy != "absorb":
                    raise NonFiniteError(
                        f"path {int(ids[idx[bad][0]])} became non-finite at t={t:.6g}")
                alive[idx[bad]] = False
                new = new[~bad]
                idx = idx[~bad]
            x[idx] = new
        if k + 1 in snap_steps:
            snaps[k + 1] = (x.copy(), ~alive)
    return snaps, clamped


def simulate_ensemble(sde, init, cfg, snapshot_times, extra_meta=None):
    """Advance ``cfg.n_paths`` paths and record snapshots.

    ``init`` is either an ``(n_paths, d)`` array or a callable
    ``init(n, seed) -> array`` (an exact sampler). Snapshot times are snapped
    to the nearest step; both requested and snapped times are kept.
    """
    if callable(init):
        x0 = np.asarray(init(cfg.n_paths, cfg.seed), dtype=float)
    else:
        x0 = np.array(init, dtype=float)
    if x0.shape != (cfg.n_paths, sde.dim):
        raise ConstructionError(f"initial points have shape {x0.shape}, "
                                f"expected {(cfg.n_paths, sde.dim)}")
    snap_steps = {}
    snapped = []
    for t in snapshot_times:
        if t < cfg.t0 - 1e-12 or t > cfg.t1 + 1e-12:
            raise DomainError(f"snapshot time {t} outside [{cfg.t0}, {cfg.t1}]")
        k = int(round((t - cfg.t0) / cfg.dt))
        snap_steps[k] = t
        snapped.append(cfg.t0 + k * cfg.dt)
    ids = np.arange(cfg.n_paths, dtype=np.uint64)
    chunks = [(s, min(s + CHUNK, cfg.n_paths)) for s in range(0, cfg.n_paths, CHUNK)]

    def work(bounds):
        a, b = bounds
        return _run_chunk(sde, x0[a:b].copy(), ids[a:b], cfg, snap_steps)

    workers = min(kernels.num_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    steps_sorted = [int(round((t - cfg.t0) / cfg.dt)) for t in snapshot_times]
    points, absorbed = [], []
    for k in steps_sorted:
        points.append(np.concatenate([r[0][k][0] for r in results]))
        absorbed.append(np.concatenate([r[0][k][1] for r in results]))
    clamped = np.concatenate([r[1] for r in results])
    n_abs = int(absorbed[-1].sum()) if absorbed else 0
    meta = {
        "seed": cfg.seed, "dt": cfg.dt, "t0": cfg.t0, "t1": cfg.t1, "n_paths": cfg.n_paths,
        "n_steps": cfg.n_steps, "policy": cfg.policy,
        "snapshot_times": snapped, "requested_times": [float(t) for t in snapshot_times],
        "absorbed_count": n_abs, "clamped_paths": int((clamped > 0).sum()),
        "config_hash": cfg.config_hash(extra_meta), "provenance": sde.provenance,
        "warnings": [],
    }
    if n_abs > 0.01 * cfg.n_paths:
        meta["warnings"].append(f"{n_abs} of {cfg.n_paths} paths absorbed (> 1%)")
        log.warning(meta["warnings"][-1])
    return Ensemble(snapped, [float(t) for t in snapshot_times], points, absorbed, meta)


def snapshot(ensemble, t):
    """Non-absorbed points at snapshot time ``t``."""
    i = ensemble.index_of(t)
    return ensemble.points[i][~ensemble.absorbed[i]]


def moments(points):
    points = np.asarray(points, dtype=float)
    return points.mean(axis=0), np.cov(points, rowvar=False)


def write_snapshots_csv(ensemble, path):
    d = ensemble.dim
    with open(path, "w") as fh:
        fh.write(",".join(["t", "path_id"] + [f"x{i + 1}" for i in range(d)]) + "\n")
        for t, pts, gone in zip(ensemble.times, ensemble.points, ensemble.absorbed):
            ts = fmt_float(t)
            for pid in np.flatnonzero(~gone):
                fh.write(ts + "," + str(pid) + "," + ",".join(fmt_float(v) for v in pts[pid]) + "\n")


def write_ensemble_json(ensemble, path, extra=None):
    meta = dict(ensemble.metadata)
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
