"""Parameter sweeps with paired noise, and refinement ladders against a reference.

Every point of a sweep reuses the master seed, so path ``i`` of each point
is driven by the same Brownian path. With ``fine_dt`` set, runs at
different time steps also share that path.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..solver import ConfigError
from .config import RunConfig, default_points
from .diagnostics import (DensitySnapshots, FluxPairingProbe, IntegrabilityProbe, check_theta,
                          default_theta, flux_pairing, oscillation_defect, plateau_ratio)
from .ensemble import EnsembleResult, mean_se, run_ensemble

SWEEPABLE = ("eps", "delta", "n", "dt", "n_modes")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    paired: bool = True

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {self.parameter!r}; choose from {SWEEPABLE}")
        vals = tuple(self.values)
        if not vals:
            raise ConfigError("sweep value list is empty")
        diffs = np.diff(np.asarray(vals, dtype=float))
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("sweep values must be strictly sorted")
        object.__setattr__(self, "values", vals)

    def apply(self, cfg: RunConfig, value) -> RunConfig:
        if self.parameter == "n_modes":
            return replace(cfg, noise=replace(cfg.noise, n_modes=int(value)))
        if self.parameter == "n":
            cfg = cfg.with_params(n=int(value))
            return replace(cfg, grid=replace(cfg.grid, points=None))
        out = cfg.with_params(**{self.parameter: float(value)})
        if not self.paired:
            out = replace(out, ensemble=replace(out.ensemble, seed=out.ensemble.seed + 1))
        return out


@dataclass
class SweepPoint:
    value: float
    mean: float
    se: float | None
    statuses: dict
    per_path: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    parameter: str
    quantity: str
    points: list
    ratio: float
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"parameter": self.parameter, "value": p.value, "quantity": self.quantity,
                 "mean": p.mean, "se": p.se, **{f"n_{k}": v for k, v in p.statuses.items()}}
                for p in self.points]


def _statuses(res: EnsembleResult) -> dict:
    out = {"completed": 0, "halted": 0, "failed": 0}
    for r in res.paths:
        out[r.status] += 1
    return out


class _Factory:
    """Picklable observer factory for sweep points."""

    def __init__(self, theta: float, snap_every: int | None, k_list=None, T=None):
        self.theta, self.snap_every, self.k_list, self.T = theta, snap_every, k_list, T

    def __call__(self, stp, cfg):
        obs = {"probe": _ProbeWrap(IntegrabilityProbe(self.theta))}
        if self.snap_every:
            obs["snapshots"] = DensitySnapshots(self.snap_every)
        if self.k_list:
            obs["flux"] = _FluxWrap(FluxPairingProbe(tuple(self.k_list), self.T))
        return obs


class _ProbeWrap:
    def __init__(self, probe):
        self.probe = probe

    def start(self, *a):
        self.probe.start(*a)

    def __call__(self, info):
        self.probe(info)

    def result(self):
        return {"gamma": self.probe.integral_gamma, "beta": self.probe.integral_beta}


class _FluxWrap:
    def __init__(self, probe):
        self.probe = probe

    def start(self, *a):
        self.probe.start(*a)

    def __call__(self, info):
        self.probe(info)

    def result(self):
        return dict(self.probe.values)


def _probe_values(res: EnsembleResult, part: str = "gamma") -> list[float]:
    return [r.extras["probe"][part] for r in res.paths if r.status == "completed"]


def sweep_eps(cfg: RunConfig, values=None, paths: int | None = None) -> SweepResult:
    """``E int int rho^(gamma+1)`` across artificial-viscosity values."""
    spec = SweepSpec("eps", tuple(values if values is not None else cfg.sweep.eps))
    theta = check_theta(1.0, cfg.params.gamma, "eps")
    if paths is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, paths=paths))
    points = []
    for v in spec.values:
        res = run_ensemble(spec.apply(cfg, v), extra=_Factory(theta, None))
        vals = _probe_values(res)
        m, se = mean_se(vals)
        points.append(SweepPoint(float(v), m, se, _statuses(res), vals))
    return SweepResult("eps", "rho^(gamma+1)", points, plateau_ratio(p.mean for p in points))


def reference_config(cfg: RunConfig, n_ref: int | None, dt_ref: float | None) -> RunConfig:
    """Finest affordable resolution: ``n_ref`` modes and ``dt_ref`` (defaults 2n, dt/2)."""
    n_ref = n_ref if n_ref is not None else 2 * cfg.params.n
    dt_ref = dt_ref if dt_ref is not None else 0.5 * cfg.params.dt
    out = cfg.with_params(n=n_ref, dt=dt_ref)
    return replace(out, grid=replace(out.grid, points=default_points(n_ref)))


def _paired(cfg: RunConfig, fine_dt: float) -> RunConfig:
    return replace(cfg, ensemble=replace(cfg.ensemble, fine_dt=fine_dt))


def sweep_delta(cfg: RunConfig, values=None, paths: int | None = None, theta: float | None = None,
                n_ref: int | None = None, dt_ref: float | None = None) -> SweepResult:
    """``E int int rho^(gamma+theta)`` and the oscillation defect across pressure values.

    The defect of each point is taken against one reference ensemble at the
    smallest ``delta`` and the finer resolution; paths are paired by index.
    """
    sw = cfg.sweep
    spec = SweepSpec("delta", tuple(values if values is not None else sw.delta))
    theta = default_theta(cfg.params.gamma) if theta is None and sw.theta is None else (
        theta if theta is not None else sw.theta)
    check_theta(theta, cfg.params.gamma, "delta")
    if paths is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, paths=paths))
    n_ref = n_ref if n_ref is not None else sw.n_ref
    ref_cfg = reference_config(cfg.with_params(delta=min(spec.values)), n_ref, dt_ref)
    fine_dt = ref_cfg.params.dt
    ratio_steps = int(round(cfg.params.dt / fine_dt))
    snap = sw.snapshot_every
    ref_cfg = _paired(ref_cfg, fine_dt)
    ref = run_ensemble(ref_cfg, extra=_Factory(theta, snap * ratio_steps))
    points = []
    defects = []
    for v in spec.values:
        res = run_ensemble(_paired(spec.apply(cfg, v), fine_dt), extra=_Factory(theta, snap))
        vals = _probe_values(res)
        m, se = mean_se(vals)
        per_k = _defect(res, ref, sw.k_list, cfg.params.gamma)
        dmax = max(per_k.values()) if per_k else float("nan")
        defects.append(dmax)
        points.append(SweepPoint(float(v), m, se, _statuses(res), vals,
                                 {"defect_per_k": per_k, "defect": dmax}))
    out = SweepResult("delta", f"rho^(gamma+{theta:.6g})", points,
                      plateau_ratio(p.mean for p in points))
    out.extra = {"theta": theta, "defect_ratio": plateau_ratio(defects),
                 "reference": {"n": ref_cfg.params.n, "dt": ref_cfg.params.dt,
                               "delta": ref_cfg.params.delta, "statuses": _statuses(ref)}}
    return out


def _defect(coarse: EnsembleResult, ref: EnsembleResult, k_list, gamma: float) -> dict:
    """Ensemble mean over paired paths of the defect, per ``k``."""
    acc: dict[float, list] = {}
    for a, b in zip(coarse.paths, ref.paths):
        if a.status != "completed" or b.status != "completed":
            continue
        d = oscillation_defect(a.extras["snapshots"], b.extras["snapshots"], k_list, gamma)
        for k, v in d["per_k"].items():
            acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


@dataclass
class LadderResult:
    levels: list
    gaps: list
    per_k: list
    reference: dict
    monotone_breaks: int

    @property
    def trending(self) -> bool:
        return self.monotone_breaks <= 1 and self.gaps[-1] < self.gaps[0]


def count_breaks(values) -> int:
    v = list(values)
    return sum(1 for a, b in zip(v[:-1], v[1:]) if not b < a)


def flux_pairing_ladder(cfg: RunConfig, levels, reference, k_list=None,
                        paths: int | None = None) -> LadderResult:
    """Pairing gap of each ``(n, dt)`` level against a reference ``(n, dt)``."""
    k_list = tuple(k_list if k_list is not None else cfg.sweep.k_list)
    if paths is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, paths=paths))
    n_ref, dt_ref = reference
    T = cfg.params.T

    def run(n, dt):
        c = reference_config(cfg, n, dt)
        c = _paired(c, dt_ref)
        res = run_ensemble(c, extra=_Factory(0.0, None, k_list, T))
        return {k: [r.extras["flux"][k] for r in res.paths if r.status == "completed"] for k in k_list}

    ref = run(n_ref, dt_ref)
    gaps, per_k = [], []
    for n, dt in levels:
        g = flux_pairing(run(n, dt), ref)
        per_k.append(g)
        gaps.append(max(g.values()))
    ref_mean = {k: float(np.mean(v)) for k, v in ref.items()}
    return LadderResult([tuple(l) for l in levels], gaps, per_k,
                        {"n": n_ref, "dt": dt_ref, "mean": ref_mean}, count_breaks(gaps))
