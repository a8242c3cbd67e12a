"""Monte-Carlo ensembles: per-path seeds, path execution, ordered reduction.

Per-path seeds come from :class:`numpy.random.SeedSequence` spawned off the
master seed, so path ``i`` sees the same Brownian path whatever the worker
count or schedule. Results are always reduced in path-index order.
"""
from __future__ import annotations

import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import noise as nz
from ..checkpoint import CheckpointWriter
from ..monitors import CheckpointMonitor, EnergyLedger, MonitorRecord, max_principle_check, write_ndjson
from ..solver import NumericalFailure, Stepper, build_initial_state, simulate
from .config import RunConfig
from .diagnostics import IntegrabilityProbe

STATUSES = ("completed", "halted", "failed")


def derive_seeds(master: int, count: int) -> list[int]:
    """``count`` independent 64-bit path seeds from one master seed."""
    ss = np.random.SeedSequence(int(master) & 0xFFFFFFFFFFFFFFFF)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(count)]


def wiener_path(cfg: RunConfig, seed: int) -> nz.WienerPath:
    dt = cfg.params.dt
    fine = cfg.ensemble.fine_dt or dt
    refine = int(round(dt / fine))
    if refine < 1 or abs(refine * fine - dt) > 1e-9 * dt:
        raise ValueError(f"dt={dt} is not a multiple of fine_dt={fine}")
    return nz.WienerPath(seed, dt, cfg.noise.n_modes, refine)


@dataclass
class SeriesSampler:
    """Scalar monitors every ``every`` steps (and at the last step)."""

    every: int
    ledger: EnergyLedger | None = None
    theta: float | None = None
    series: dict = field(default_factory=dict)
    _last_step: int = -1

    def start(self, stp, st, gf):
        self.stp = stp
        self.mass0 = float(st.rho[(0,) * stp.d]) * stp.sqrt_vol
        self.series = {}
        self._sample(st, gf)

    def __call__(self, info):
        if info.after.step % self.every == 0:
            self._sample(info.after, info.gf_after)

    def finish(self, stp, st, gf):
        if st.step != self._last_step:
            self._sample(st, gf)

    def _put(self, name, value):
        self.series.setdefault(name, []).append(float(value))

    def _sample(self, st, gf):
        p = self.stp.params
        self._last_step = st.step
        self._put("t", st.t)
        mass = float(st.rho[(0,) * self.stp.d]) * self.stp.sqrt_vol
        self._put("mass_drift", abs(mass - self.mass0) / abs(self.mass0))
        self._put("c_overshoot", max_principle_check(gf.c, p.c_lo, p.c_hi))
        self._put("rho_min", gf.rho.min())
        self._put("rho_max", gf.rho.max())
        self._put("u_l2", math.sqrt(float(np.sum(st.u ** 2))))
        if self.ledger is not None:
            lg = self.ledger
            self._put("energy", lg.E[-1])
            self._put("dissipation", lg.D[-1])
            self._put("ito", lg.I[-1])
            self._put("martingale", lg.S[-1])
            self._put("energy_residual", lg.E[-1] + lg.D[-1] - lg.E[0] - lg.I[-1] - lg.S[-1])
        if self.theta is not None:
            r = np.abs(gf.rho)
            self._put("rho_gamma_theta", self.stp.grid.integrate(r ** (p.gamma + self.theta)))
            self._put("rho_beta_theta", p.delta * self.stp.grid.integrate(r ** (p.beta + self.theta)))


@dataclass
class PathResult:
    index: int
    seed: int
    status: str
    tau_K: float | None = None
    error: str | None = None
    steps: int = 0
    wall: float = 0.0
    series: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


ObserverFactory = Callable[[Stepper, RunConfig], dict]


def run_path(cfg: RunConfig, index: int, seed: int, out_dir: Path | None = None,
             extra: ObserverFactory | None = None, stepper: Stepper | None = None) -> PathResult:
    """Run one path; failures are captured in the result, never raised.

    ``extra`` returns named observers; after the run each one's ``result()``
    (or the observer itself when it has none) lands in ``extras``.
    """
    t0 = time.perf_counter()
    p = cfg.params
    stp = stepper if stepper is not None else Stepper(cfg.make_grid(), p, cfg.noise)
    mon = cfg.monitors
    ledger = EnergyLedger(track_sources=mon.energy_sources) if mon.energy else None
    every = max(1, cfg.output.monitor_every)
    sampler = SeriesSampler(every, ledger, mon.integrability_theta)
    recorder = CheckpointMonitor(stp, every, ledger)
    observers = [o for o in (ledger, sampler, recorder) if o is not None]
    probe = None
    if mon.integrability_theta is not None:
        probe = IntegrabilityProbe(mon.integrability_theta)
        observers.append(probe)
    named = extra(stp, cfg) if extra is not None else {}
    observers.extend(named.values())
    if out_dir is not None and cfg.output.checkpoint_every > 0:
        observers.append(CheckpointWriter(Path(out_dir) / "checkpoints", stp.grid, p,
                                          cfg.output.checkpoint_every, seed,
                                          prefix=f"path{index:04d}_step"))
    res = PathResult(index, seed, "failed")
    try:
        st, _ = build_initial_state(stp, cfg.initial)
        path = wiener_path(cfg, seed) if cfg.noise.n_modes else None
        run = simulate(stp, st, path, p.n_steps, observers, keep_reports=False)
        res.status = "halted" if run.halted else "completed"
        res.tau_K = run.tau_K
        res.steps = run.steps
    except (NumericalFailure, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        res.extras["traceback"] = traceback.format_exc(limit=3)
    res.series = sampler.series
    res.records = recorder.records
    if probe is not None:
        res.extras["integrability"] = {"gamma": probe.integral_gamma, "beta": probe.integral_beta}
    for name, ob in named.items():
        res.extras[name] = ob.result() if hasattr(ob, "result") else ob
    res.wall = time.perf_counter() - t0
    return res


@dataclass
class EnsembleResult:
    config: RunConfig
    seeds: list
    paths: list
    started: float
    finished: float

    def by_status(self, status: str) -> list:
        return [r for r in self.paths if r.status == status]

    def values(self, name: str, statuses=("completed", "halted")) -> list:
        return [r.series.get(name, []) for r in self.paths if r.status in statuses]


def _worker(args):
    cfg, index, seed, out_dir, extra = args
    return run_path(cfg, index, seed, out_dir, extra)


def run_ensemble(cfg: RunConfig, out_dir: Path | None = None, extra: ObserverFactory | None = None,
                 workers: int | None = None, indices=None) -> EnsembleResult:
    """Run ``cfg.ensemble.paths`` paths; a failing path never stops the rest."""
    started = time.time()
    M = cfg.ensemble.paths
    seeds = derive_seeds(cfg.ensemble.seed, M)
    idx = list(range(M)) if indices is None else sorted(indices)
    workers = cfg.ensemble.workers if workers is None else workers
    if workers > 1 and len(idx) > 1:
        jobs = [(cfg, i, seeds[i], out_dir, extra) for i in idx]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        stp = Stepper(cfg.make_grid(), cfg.params, cfg.noise)
        results = [run_path(cfg, i, seeds[i], out_dir, extra, stepper=stp) for i in idx]
    results.sort(key=lambda r: r.index)
    if out_dir is not None:
        mdir = Path(out_dir) / "monitors"
        mdir.mkdir(parents=True, exist_ok=True)
        for r in results:
            write_ndjson(mdir / f"path_{r.index:04d}.ndjson", r.records)
    return EnsembleResult(cfg, seeds, results, started, time.time())


# ---------------------------------------------------------------- reduction

def mean_se(values) -> tuple[float, float | None]:
    """Sample mean and standard error; SE is ``None`` for fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), None
    m = float(np.mean(v))
    if v.size < 2:
        return m, None
    return m, float(np.std(v, ddof=1) / math.sqrt(v.size))


def summarize(result: EnsembleResult) -> list[dict]:
    """Rows ``(time, quantity, count, mean, se, min, max)`` ordered by quantity then time."""
    rows = []
    live = [r for r in result.paths if r.status in ("completed", "halted") and r.series]
    if not live:
        return rows
    names = [k for k in live[0].series if k != "t"]
    for name in names:
        table: dict[float, list] = {}
        for r in live:
            for t, v in zip(r.series["t"], r.series.get(name, [])):
                table.setdefault(round(t, 12), []).append(v)
        for t in sorted(table):
            vals = table[t]
            m, se = mean_se(vals)
            rows.append({"time": t, "quantity": name, "count": len(vals), "mean": m, "se": se,
                         "min": float(np.min(vals)), "max": float(np.max(vals))})
    return rows


def final_values(result: EnsembleResult, name: str) -> np.ndarray:
    """Last sampled value of ``name`` for every completed path."""
    return np.array([r.series[name][-1] for r in result.paths
                     if r.status == "completed" and name in r.series])


def values_at(result: EnsembleResult, name: str, t: float) -> np.ndarray:
    """Values of ``name`` at time ``t`` on paths that reached it."""
    out = []
    for r in result.paths:
        if r.status == "failed" or name not in r.series:
            continue
        ts = np.asarray(r.series["t"])
        hit = np.nonzero(np.abs(ts - t) < 1e-9)[0]
        if hit.size:
            out.append(r.series[name][hit[0]])
    return np.asarray(out)


def with_paths(cfg: RunConfig, paths: int | None = None, seed: int | None = None) -> RunConfig:
    ens = cfg.ensemble
    if paths is not None:
        ens = replace(ens, paths=int(paths))
    if seed is not None:
        ens = replace(ens, seed=int(seed))
    return replace(cfg, ensemble=ens)
