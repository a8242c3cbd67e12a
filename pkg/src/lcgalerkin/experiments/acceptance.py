"""The acceptance suite: twelve exit criteria, each a function returning a
:class:`CriterionResult`.

A criterion passes only when its property holds at the stated tolerance and
it finished inside its wall-clock budget. Criteria 9 and 10 share one
refinement ladder; whichever runs first pays for it and the other reports
the same runtime.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .. import noise as nz
from .._backend import active_backend
from .. import spectral as sp
from .. import tensor as tn
from ..monitors import EQUATIONS, EnergyLedger, OvershootMonitor, Renormalizer, WeakRecorder
from ..solver import (InitialData, RegularizationParams, State, Stepper, build_initial_state,
                      simulate)
from ..spectral import COS, SIN, Grid
from .config import RunConfig, config_from_dict, default_points
from .ensemble import mean_se, run_ensemble, values_at
from .sweeps import flux_pairing_ladder, sweep_delta, sweep_eps


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    runtime: float
    budget: float
    detail: dict = field(default_factory=dict)

    @property
    def within_budget(self) -> bool:
        return self.runtime <= self.budget

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.number:2d} {self.title}: {self.summary} "
                f"({self.runtime:.1f}s of {self.budget:.0f}s)")

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "summary": self.summary, "runtime": self.runtime, "budget": self.budget,
                "detail": _plain(self.detail)}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


@dataclass
class SuiteContext:
    seed: int = 20240917
    cache: dict = field(default_factory=dict)


def _result(number, title, ok, summary, t0, budget, detail) -> CriterionResult:
    runtime = time.perf_counter() - t0
    return CriterionResult(number, title, bool(ok and runtime <= budget), summary, runtime, budget,
                           detail)


def _default_stepper(noise: bool = True, **kw) -> Stepper:
    p = RegularizationParams(**kw)
    g = Grid.cube(2, default_points(p.n))
    return Stepper(g, p, nz.NoiseModel() if noise else nz.NoiseModel(n_modes=0))


# ---------------------------------------------------------------- 1

def _unit(x, axes):
    return x / np.sqrt(np.sum(x * x, axis=axes, keepdims=True))


def criterion_1(ctx: SuiteContext, samples: int = 1_000_000, chunk: int = 100_000) -> CriterionResult:
    """Commutator cancellation and trace annihilation on random unit-norm triples."""
    t0 = time.perf_counter()
    rng = np.random.default_rng([ctx.seed, 1])
    worst_gap = 0.0
    worst_tr = np.zeros(3)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        mq = tn.to_matrix(tn.random_q(rng, (m,)))
        mb = tn.to_matrix(tn.random_q(rng, (m,)))
        q = tn.sym_traceless_project(_unit(mq, (0, 1)))
        b = tn.sym_traceless_project(_unit(mb, (0, 1)))
        g = _unit(rng.standard_normal((3, 3, m)), (0, 1))
        gap, traces = tn.cancellation_residuals(q, b, g)
        worst_gap = max(worst_gap, float(gap.max()))
        worst_tr = np.maximum(worst_tr, np.abs(traces).max(axis=1))
        done += m
    ok = worst_gap <= 1e-12 and bool(np.all(worst_tr <= 1e-13))
    summary = (f"max relative gap {worst_gap:.2e} (tol 1e-12), max |tr| k=1..3 "
               f"{', '.join(f'{v:.1e}' for v in worst_tr)} (tol 1e-13), {samples} samples")
    return _result(1, "algebraic cancellation", ok, summary, t0, 10.0,
                   {"gap": worst_gap, "traces": worst_tr, "samples": samples,
                    "backend": active_backend()})


# ---------------------------------------------------------------- 2

def criterion_2(ctx: SuiteContext, steps: int = 1000) -> CriterionResult:
    """Symmetric-traceless structure and mass over a long default coupled run."""
    t0 = time.perf_counter()
    stp = _default_stepper(noise=True)
    st, _ = build_initial_state(stp, InitialData())
    mass0 = float(st.rho[0, 0]) * stp.sqrt_vol
    path = nz.WienerPath(ctx.seed, stp.dt, stp.noise.n_modes)
    worst = {"trace": 0.0, "asym": 0.0}

    def watch(info):
        q = tn.to_matrix(info.gf_after.q)
        worst["trace"] = max(worst["trace"], float(np.abs(np.einsum("ii...->...", q)).max()))
        worst["asym"] = max(worst["asym"], float(np.abs(q - np.swapaxes(q, 0, 1)).max()))

    run = simulate(stp, st, path, steps, [watch], keep_reports=True)
    kernel = max(r.q_structure_residual for r in run.reports) if run.reports else 0.0
    mass = float(run.state.rho[0, 0]) * stp.sqrt_vol
    drift = abs(mass - mass0) / abs(mass0)
    structure = max(worst["trace"], worst["asym"], kernel)
    ok = structure <= 1e-12 and drift <= 1e-10 and run.steps == steps
    summary = (f"max |tr Q| {worst['trace']:.1e}, asymmetry {worst['asym']:.1e}, assembled "
               f"residual {kernel:.1e} (tol 1e-12); mass drift {drift:.1e} (tol 1e-10); "
               f"{run.steps} steps")
    return _result(2, "structure preservation", ok, summary, t0, 60.0,
                   {"trace": worst["trace"], "asymmetry": worst["asym"], "kernel": kernel,
                    "mass_drift": drift, "steps": run.steps, "halted": run.halted})


# ---------------------------------------------------------------- 3

def heat_errors(dts, T: float = 0.2, n: int = 16, modes=((1, 0), (1, 1), (2, 1))) -> list[float]:
    """Max-coefficient error of Crank-Nicolson heat flow against ``exp(-kappa^2 T)``."""
    errs = []
    for dt in dts:
        stp = _default_stepper(noise=False, n=n, dt=dt, T=T)
        c0 = np.zeros(stp.grid.shape)
        for i, k in enumerate(modes):
            c0[k] = 1.0 / (i + 1)
        z = stp.zero_state()
        c = c0.copy()
        for _ in range(stp.params.n_steps):
            gf = stp.grid_fields(State(z.rho, z.u, z.m, c, z.q))
            c, _ = stp.advance_concentration(c, gf)
        exact = c0 * np.exp(-stp.k2 * stp.params.n_steps * dt)
        errs.append(float(np.abs(c - exact).max()))
    return errs


def criterion_3(ctx: SuiteContext) -> CriterionResult:
    t0 = time.perf_counter()
    dts = (2e-2, 1e-2, 5e-3, 2.5e-3)
    errs = heat_errors(dts)
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    ok = all(abs(o - 2.0) <= 0.2 for o in orders)
    summary = f"orders {', '.join(f'{o:.3f}' for o in orders)} (target 2.0 +- 0.2)"
    return _result(3, "heat-kernel oracle", ok, summary, t0, 30.0,
                   {"dt": dts, "errors": errs, "orders": orders})


# ---------------------------------------------------------------- 4

def criterion_4(ctx: SuiteContext, amplitude: float = 2.0) -> CriterionResult:
    """Density stays in the envelope under a prescribed flow with ``sup|div u| = a pi``."""
    t0 = time.perf_counter()
    stp = _default_stepper(noise=False)
    p, g = stp.params, stp.grid
    st, _ = build_initial_state(stp, InitialData(preset="vacuum"))
    X, Y = g.mesh
    shape = amplitude * np.sin(np.pi * X) * np.sin(np.pi * Y)
    u = sp.project_coeffs(sp.forward(np.stack([shape, shape]), SIN, g), g, p.n)
    div_sup = abs(amplitude) * np.pi  # div u = a pi sin(pi (x + y))
    rho = st.rho
    integral = 0.0
    worst = math.inf
    for _ in range(p.n_steps):
        gf = stp.grid_fields(State(rho, u, st.m, st.c, st.q))
        rho, _ = stp.advance_density(rho, gf)
        integral += p.dt * div_sup
        v = sp.inverse(rho, COS, g)
        lo = p.delta * math.exp(-integral)
        hi = p.delta ** (-1.0 / p.beta) * math.exp(integral)
        worst = min(worst, float(v.min()) - lo, hi - float(v.max()))
    ok = worst >= -1e-8
    summary = f"smallest envelope margin {worst:.3e} (tol -1e-8), int sup|div u| = {integral:.3f}"
    return _result(4, "density envelope", ok, summary, t0, 30.0,
                   {"margin": worst, "div_integral": integral})


# ---------------------------------------------------------------- 5

def mass_matrix_norms(stp: Stepper, rho_vals: np.ndarray) -> tuple[float, float]:
    """``(||M[rho]^-1||, ||1/rho||_inf)`` with M assembled column by column from ``apply_mass``."""
    n, g = stp.params.n, stp.grid
    idx = [(i, j) for i in range(1, n + 1) for j in range(1, n + 1)]
    basis = np.zeros((len(idx), 1) + g.shape)
    for col, (i, j) in enumerate(idx):
        basis[col, 0, i, j] = 1.0
    cols = stp.apply_mass(rho_vals, basis)
    M = np.array([c[0][tuple(np.array(idx).T)] for c in cols]).T
    lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return 1.0 / lam_min, float(np.max(1.0 / rho_vals))


def criterion_5(ctx: SuiteContext, trials: int = 100) -> CriterionResult:
    t0 = time.perf_counter()
    stp = _default_stepper(noise=False, n=16)
    g = stp.grid
    rng = np.random.default_rng([ctx.seed, 5])
    worst = -math.inf
    for _ in range(trials):
        co = np.zeros(g.shape)
        co[:6, :6] = rng.standard_normal((6, 6)) / (1.0 + np.add.outer(np.arange(6), np.arange(6)))
        field_ = sp.inverse(co, COS, g)
        rho = np.exp(field_) * rng.uniform(0.05, 2.0)
        inv_norm, bound = mass_matrix_norms(stp, rho)
        worst = max(worst, inv_norm - bound)
    ok = worst <= 1e-10
    summary = f"max ||M^-1|| - ||1/rho||_inf = {worst:.2e} (tol 1e-10) over {trials} densities"
    return _result(5, "mass-matrix bound", ok, summary, t0, 60.0, {"excess": worst})


# ---------------------------------------------------------------- 6

def criterion_6(ctx: SuiteContext) -> CriterionResult:
    t0 = time.perf_counter()
    stp = _default_stepper(noise=False)
    st, _ = build_initial_state(stp, InitialData())
    ledger = EnergyLedger()
    simulate(stp, st, None, stp.params.n_steps, [ledger], keep_reports=False)
    R = ledger.residual()
    E0 = ledger.E[0]
    worst = float(R.max())
    ok = worst <= 1e-6 * E0
    summary = f"max R(t) = {worst:.3e} vs 1e-6 E(0) = {1e-6 * E0:.3e}; R(T) = {R[-1]:.3e}"
    return _result(6, "noise-off energy inequality", ok, summary, t0, 60.0,
                   {"max_R": worst, "E0": E0, "R_final": float(R[-1])})


# ---------------------------------------------------------------- 7

def criterion_7(ctx: SuiteContext, n: int = 8, paths: int = 256, energy_paths: int = 64) -> CriterionResult:
    """Ensemble energy budget (first ``energy_paths`` paths) and martingale mean (all paths)."""
    t0 = time.perf_counter()
    cfg = config_from_dict({"params": {"n": n}, "ensemble": {"paths": paths, "seed": ctx.seed},
                            "output": {"monitor_every": 100}})
    res = run_ensemble(cfg)
    sub = replace(res, paths=[r for r in res.paths if r.index < energy_paths])
    checks = []
    for t in (0.1, 0.2, 0.3, 0.4, 0.5):
        R = values_at(sub, "energy_residual", t)
        m, se = mean_se(R)
        checks.append({"t": t, "mean": m, "se": se, "count": len(R),
                       "ok": se is not None and m <= 3.0 * se})
    S = values_at(res, "martingale", cfg.params.T)
    ms, ses = mean_se(S)
    mart_ok = ses is not None and abs(ms) <= 4.0 * ses
    failed = sum(r.status == "failed" for r in res.paths)
    ok = all(c["ok"] for c in checks) and mart_ok and failed == 0
    worst = max(checks, key=lambda c: c["mean"] - 3.0 * (c["se"] or 0.0))
    summary = (f"worst mean R {worst['mean']:.3e} at t={worst['t']} (3 SE = "
               f"{3.0 * (worst['se'] or float('nan')):.2e}, {worst['count']} paths); martingale mean "
               f"{ms:.2e} vs 4 SE {4.0 * (ses or float('nan')):.2e} ({len(S)} paths)")
    return _result(7, "stochastic energy budget", ok, summary, t0, 600.0,
                   {"checkpoints": checks, "martingale_mean": ms, "martingale_se": ses,
                    "failed": failed})


# ---------------------------------------------------------------- 8

def overshoot_ladder(ctx: SuiteContext, dts=(2e-3, 1e-3, 5e-4), n: int = 16, T: float = 0.2) -> list[float]:
    out = []
    fine = min(dts)
    for dt in dts:
        stp = _default_stepper(noise=True, n=n, dt=dt, T=T)
        p = stp.params
        st, _ = build_initial_state(stp, InitialData(preset="degenerate-max", c_mean=0.5 * (p.c_lo + p.c_hi),
                                                     c_amp=0.5 * (p.c_hi - p.c_lo)))
        ov = OvershootMonitor(p.c_lo, p.c_hi)
        path = nz.WienerPath(ctx.seed, dt, stp.noise.n_modes, int(round(dt / fine)))
        simulate(stp, st, path, p.n_steps, [ov], keep_reports=False)
        out.append(ov.worst)
    return out


def _ratio(a: float, b: float) -> float:
    if b > 0:
        return a / b
    return math.inf if a > 0 else math.nan


def criterion_8(ctx: SuiteContext) -> CriterionResult:
    t0 = time.perf_counter()
    dts = (2e-3, 1e-3, 5e-4)
    ov = overshoot_ladder(ctx, dts)
    ratios = [_ratio(a, b) for a, b in zip(ov[:-1], ov[1:])]
    ok = all(r >= 1.8 for r in ratios)  # nan compares False
    summary = (f"overshoot {', '.join(f'{v:.2e}' for v in ov)} at dt {dts}; ratios "
               f"{', '.join(f'{r:.2f}' for r in ratios)} (need >= 1.8)")
    return _result(8, "maximum principle trend", ok, summary, t0, 300.0,
                   {"dt": dts, "overshoot": ov, "ratios": ratios})


# ---------------------------------------------------------------- 9 and 10

WEAK_LADDER = ((8, 8e-5), (16, 4e-5), (32, 2e-5))


def weak_ladder(ctx: SuiteContext, levels=WEAK_LADDER, T: float = 0.05, k_identity: float = 2.0,
                k_saturating: float = 1.0) -> dict:
    if "weak" in ctx.cache:
        return ctx.cache["weak"]
    t0 = time.perf_counter()
    fine = min(dt for _, dt in levels)
    ident, sat = Renormalizer.tk(k_identity), Renormalizer.tk(k_saturating)
    out = {"levels": levels, "residuals": {e: [] for e in EQUATIONS}, "identity_gap": [],
           "saturating": [], "rho_max": []}
    for n, dt in levels:
        stp = _default_stepper(noise=True, n=n, dt=dt, T=T)
        st, _ = build_initial_state(stp, InitialData())
        rec = WeakRecorder(stp, renormalizers=[ident, sat])
        peak = {"rho": 0.0}

        def watch(info):
            peak["rho"] = max(peak["rho"], float(info.gf_after.rho.max()))

        path = nz.WienerPath(ctx.seed, dt, stp.noise.n_modes, int(round(dt / fine)))
        simulate(stp, st, path, stp.params.n_steps, [rec, watch], keep_reports=False)
        for e in EQUATIONS:
            out["residuals"][e].append(float(rec.residuals(e).max()))
        dens = rec.residuals("density")
        out["identity_gap"].append(float(np.max(np.abs(rec.renormalized(ident.name) - dens))))
        out["saturating"].append(float(rec.renormalized(sat.name).max()))
        out["rho_max"].append(peak["rho"])
    out["runtime"] = time.perf_counter() - t0
    out["k_identity"] = k_identity
    ctx.cache["weak"] = out
    return out


def criterion_9(ctx: SuiteContext) -> CriterionResult:
    t0 = time.perf_counter()
    lad = weak_ladder(ctx)
    ok = True
    parts = []
    for e, vals in lad["residuals"].items():
        mono = all(b < a for a, b in zip(vals[:-1], vals[1:]))
        ok = ok and mono and vals[-1] <= 1e-4
        parts.append(f"{e} {' > '.join(f'{v:.2e}' for v in vals)}")
    res = _result(9, "weak residuals", ok, "; ".join(parts) + " (final tol 1e-4)", t0, 600.0,
                  {"levels": lad["levels"], "residuals": lad["residuals"]})
    res.runtime = max(res.runtime, lad["runtime"])
    res.passed = ok and res.runtime <= res.budget
    return res


def criterion_10(ctx: SuiteContext) -> CriterionResult:
    t0 = time.perf_counter()
    lad = weak_ladder(ctx)
    gap = max(lad["identity_gap"])
    in_regime = max(lad["rho_max"]) <= lad["k_identity"]
    sat = lad["saturating"]
    orders = [math.log2(a / b) if b > 0 else math.inf for a, b in zip(sat[:-1], sat[1:])]
    ok = gap <= 1e-12 and in_regime and all(o >= 0.8 for o in orders)
    summary = (f"identity-regime gap {gap:.1e} (tol 1e-12, max rho {max(lad['rho_max']):.3f}); "
               f"saturating residuals {', '.join(f'{v:.2e}' for v in sat)}, orders "
               f"{', '.join(f'{o:.2f}' for o in orders)} (splitting order 1, need >= 0.8)")
    res = _result(10, "renormalized residual", ok, summary, t0, 300.0,
                  {"identity_gap": gap, "saturating": sat, "orders": orders})
    res.runtime = max(res.runtime, lad["runtime"])
    res.passed = ok and res.runtime <= res.budget
    return res


# ---------------------------------------------------------------- 11

SWEEP_BASE = {"params": {"n": 8, "dt": 1e-3, "T": 0.5}}


def criterion_11(ctx: SuiteContext, paths: int = 16, n_ref: int = 16, dt_ref: float = 5e-4) -> CriterionResult:
    t0 = time.perf_counter()
    cfg = config_from_dict({**SWEEP_BASE, "ensemble": {"paths": paths, "seed": ctx.seed}})
    eps = sweep_eps(cfg)
    dlt = sweep_delta(cfg, n_ref=n_ref, dt_ref=dt_ref)
    dratio = dlt.extra["defect_ratio"]
    failed = sum(p.statuses["failed"] for p in eps.points + dlt.points)
    ok = eps.ratio < 2.0 and dlt.ratio < 2.0 and dratio < 2.0 and failed == 0
    summary = (f"eps plateau ratio {eps.ratio:.3f}, delta plateau ratio {dlt.ratio:.3f}, "
               f"defect plateau ratio {dratio:.3f} (each < 2)")
    return _result(11, "sweep plateaus", ok, summary, t0, 1200.0,
                   {"eps": [(p.value, p.mean, p.se) for p in eps.points],
                    "delta": [(p.value, p.mean, p.se, p.extra["defect"]) for p in dlt.points],
                    "theta": dlt.extra["theta"], "reference": dlt.extra["reference"],
                    "eps_ratio": eps.ratio, "delta_ratio": dlt.ratio, "defect_ratio": dratio})


# ---------------------------------------------------------------- 12

FLUX_LADDER = ((6, 2e-3), (8, 1e-3), (12, 5e-4))
FLUX_REFERENCE = (16, 2.5e-4)


def criterion_12(ctx: SuiteContext, paths: int = 8) -> CriterionResult:
    t0 = time.perf_counter()
    cfg = config_from_dict({**SWEEP_BASE, "ensemble": {"paths": paths, "seed": ctx.seed}})
    lad = flux_pairing_ladder(cfg, FLUX_LADDER, FLUX_REFERENCE)
    ok = lad.trending
    summary = (f"gaps {', '.join(f'{g:.3e}' for g in lad.gaps)} over (n, dt) {list(lad.levels)} "
               f"vs reference {FLUX_REFERENCE}; {lad.monotone_breaks} non-monotone step(s) (allow 1)")
    return _result(12, "flux-pairing trend", ok, summary, t0, 600.0,
                   {"levels": lad.levels, "gaps": lad.gaps, "per_k": lad.per_k,
                    "reference": lad.reference})


CRITERIA: dict[int, Callable[[SuiteContext], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11, 12: criterion_12,
}


def run_suite(numbers=None, seed: int | None = None, log: Callable[[str], None] | None = None
              ) -> list[CriterionResult]:
    ctx = SuiteContext() if seed is None else SuiteContext(seed=seed)
    out = []
    for k in sorted(numbers or CRITERIA):
        try:
            res = CRITERIA[k](ctx)
        except Exception as exc:  # a crashing criterion is a failing criterion
            res = CriterionResult(k, f"criterion {k}", False, f"raised {type(exc).__name__}: {exc}",
                                  0.0, 0.0, {})
        out.append(res)
        if log is not None:
            log(res.line())
    return out
