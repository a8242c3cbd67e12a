"""Limit diagnostics: integrability probes, the effective viscous flux and its
pairings, and the oscillation defect between a coarse and a reference run.

The probes are observers for :func:`lcgalerkin.solver.simulate`. Each one
accumulates a time integral with the trapezoid rule and, where a pointwise
comparison across grids is needed, keeps low-cost density snapshots
(cosine coefficients) that can be evaluated on any finer box grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import spectral as sp
from ..monitors import cutoff_Tk
from ..solver import ConfigError, GridFields, RegularizationParams, State, StepInfo, Stepper
from ..spectral import COS, Grid


# ---------------------------------------------------------------- integrability

def theta_range(gamma: float) -> tuple[float, float]:
    """Open interval of admissible exponents for the vanishing-pressure probe."""
    return 0.0, min((2.0 * gamma - 3.0) / 3.0, gamma / 3.0)


def default_theta(gamma: float) -> float:
    return 0.5 * theta_range(gamma)[1]


def check_theta(theta: float, gamma: float, sweep: str) -> float:
    """Validate ``theta`` for a sweep kind (``"eps"`` or ``"delta"``)."""
    if sweep == "delta":
        lo, hi = theta_range(gamma)
        if not lo < theta < hi:
            raise ConfigError(f"theta={theta} outside ({lo:.6g}, {hi:.6g}) for gamma={gamma}")
    elif sweep == "eps":
        if theta != 1.0:
            raise ConfigError("the vanishing-viscosity probe uses theta = 1")
    elif theta < 0:
        raise ConfigError("theta must be non-negative")
    return float(theta)


def integrability_values(grid: Grid, rho: np.ndarray, params: RegularizationParams,
                         theta: float) -> tuple[float, float]:
    """``(int rho^(gamma+theta), delta int rho^(beta+theta))`` by midpoint quadrature."""
    r = np.abs(rho)
    a = float(grid.integrate(r ** (params.gamma + theta)))
    b = float(params.delta * grid.integrate(r ** (params.beta + theta)))
    return a, b


@dataclass
class IntegrabilityProbe:
    """Time series and running time integrals of the integrability quantities."""

    theta: float
    t: list = field(default_factory=list)
    gamma_part: list = field(default_factory=list)
    beta_part: list = field(default_factory=list)
    integral_gamma: float = 0.0
    integral_beta: float = 0.0

    def start(self, stp: Stepper, st: State, gf: GridFields):
        self._grid, self._params = stp.grid, stp.params
        a, b = integrability_values(stp.grid, gf.rho, stp.params, self.theta)
        self.t, self.gamma_part, self.beta_part = [st.t], [a], [b]
        self.integral_gamma = self.integral_beta = 0.0

    def __call__(self, info: StepInfo):
        a, b = integrability_values(self._grid, info.gf_after.rho, self._params, self.theta)
        h = 0.5 * info.dt
        self.integral_gamma += h * (self.gamma_part[-1] + a)
        self.integral_beta += h * (self.beta_part[-1] + b)
        self.t.append(info.after.t)
        self.gamma_part.append(a)
        self.beta_part.append(b)

    @property
    def integral(self) -> float:
        return self.integral_gamma + self.integral_beta


def integrability_probe(stp: Stepper, states, theta: float) -> dict[str, np.ndarray]:
    """Integrability series over a list of states (a stored trajectory)."""
    t, a, b = [], [], []
    for st in states:
        gf = stp.grid_fields(st)
        x, y = integrability_values(stp.grid, gf.rho, stp.params, theta)
        t.append(st.t)
        a.append(x)
        b.append(y)
    t, a, b = np.asarray(t), np.asarray(a), np.asarray(b)
    integ = float(np.trapezoid(a + b, t)) if len(t) > 1 else 0.0
    return {"t": t, "gamma_part": a, "beta_part": b, "time_integral": integ}


# ---------------------------------------------------------------- effective viscous flux

def effective_viscous_flux_values(rho: np.ndarray, div_u: np.ndarray,
                                  params: RegularizationParams) -> np.ndarray:
    r = np.abs(rho)
    return r ** params.gamma + params.delta * r ** params.beta - (params.mu2 + 2.0 * params.mu1) * div_u


def effective_viscous_flux(stp: Stepper, st: State, gf: GridFields | None = None) -> sp.SpectralField:
    """``rho^gamma + delta rho^beta - (mu2 + 2 mu1) div u`` as a cosine field on the grid."""
    gf = stp.grid_fields(st) if gf is None else gf
    vals = effective_viscous_flux_values(gf.rho, gf.div_u, stp.params)
    return sp.SpectralField.from_values(vals, (COS,) * stp.d, stp.grid)


def space_test(grid: Grid, kind: str = "one") -> np.ndarray:
    """Spatial test function values: ``one`` or a smooth interior ``bump``."""
    if kind == "one":
        return np.ones(grid.shape)
    if kind == "bump":
        out = np.ones(grid.shape)
        for a in range(grid.d):
            out = out * np.sin(np.pi * grid.mesh[a] / grid.lengths[a]) ** 2
        return out
    raise ConfigError(f"unknown test function {kind!r}")


def time_test(t: float, T: float, kind: str = "one") -> float:
    if kind == "one":
        return 1.0
    if kind == "bump":
        return float(np.sin(np.pi * t / T) ** 2)
    raise ConfigError(f"unknown test function {kind!r}")


@dataclass
class FluxPairingProbe:
    """``int psi(t) int phi(x) F T_k(rho) dx dt`` for a list of cut-off levels."""

    k_list: tuple = (1.0, 2.0, 4.0)
    T: float = 1.0
    space_kind: str = "one"
    time_kind: str = "one"
    values: dict = field(default_factory=dict)

    def _density(self, stp, t, gf):
        phi = self._phi
        flux = effective_viscous_flux_values(gf.rho, gf.div_u, stp.params)
        w = time_test(t, self.T, self.time_kind)
        return {k: w * float(stp.grid.integrate(phi * flux * cutoff_Tk(gf.rho, k)))
                for k in self.k_list}

    def start(self, stp, st, gf):
        self._stp = stp
        self._phi = space_test(stp.grid, self.space_kind)
        self._last = self._density(stp, st.t, gf)
        self.values = {k: 0.0 for k in self.k_list}

    def __call__(self, info: StepInfo):
        cur = self._density(self._stp, info.after.t, info.gf_after)
        h = 0.5 * info.dt
        for k in self.k_list:
            self.values[k] += h * (self._last[k] + cur[k])
        self._last = cur


def flux_pairing(coarse: dict, reference: dict) -> dict:
    """Absolute gap per cut-off level between two ensemble-mean pairings.

    Arguments map ``k`` to the mean pairing value (or arrays of per-path
    values, which are averaged).
    """
    if set(coarse) != set(reference):
        raise ValueError("pairings were computed for different cut-off levels")
    return {k: abs(float(np.mean(coarse[k])) - float(np.mean(reference[k]))) for k in coarse}


# ---------------------------------------------------------------- density snapshots

@dataclass
class DensitySnapshots:
    """Cosine coefficients of rho every ``every`` steps, for cross-grid comparisons."""

    every: int = 1
    times: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)

    def start(self, stp, st, gf):
        self.grid = stp.grid
        self.times, self.coeffs = [st.t], [st.rho.copy()]

    def __call__(self, info: StepInfo):
        if info.after.step % self.every == 0:
            self.times.append(info.after.t)
            self.coeffs.append(info.after.rho.copy())

    def values_on(self, target: Grid) -> np.ndarray:
        """Snapshot values on ``target`` (same box, at least as fine)."""
        out = []
        for c in self.coeffs:
            if target.shape != self.grid.shape:
                c = sp._pad(c, self.grid, target)
            out.append(sp.inverse(c, COS, target))
        return np.asarray(out)


def _check_times(a: np.ndarray, b: np.ndarray):
    if len(a) != len(b) or not np.allclose(a, b, rtol=0, atol=1e-9):
        raise ValueError("trajectories are sampled at different times")


def defect_integrand(rho_c: np.ndarray, rho_r: np.ndarray, k: float, gamma: float,
                     grid: Grid) -> float:
    return float(grid.integrate(np.abs(cutoff_Tk(rho_c, k) - cutoff_Tk(rho_r, k)) ** (gamma + 1.0)))


def oscillation_defect(coarse: DensitySnapshots, reference: DensitySnapshots, k_list, gamma: float,
                       grid: Grid | None = None) -> dict:
    """``int int |T_k(rho_c) - T_k(rho_r)|^(gamma+1)`` per ``k`` and the max over ``k``.

    Both snapshot sets must share their sampling times. Values are compared
    on ``grid`` (default: the finer of the two).
    """
    tc, tr = np.asarray(coarse.times), np.asarray(reference.times)
    _check_times(tc, tr)
    if grid is None:
        grid = max((coarse.grid, reference.grid), key=lambda g: np.prod(g.shape))
    vc, vr = coarse.values_on(grid), reference.values_on(grid)
    per_k = {}
    for k in k_list:
        series = np.array([defect_integrand(a, b, k, gamma, grid) for a, b in zip(vc, vr)])
        per_k[float(k)] = float(np.trapezoid(series, tc)) if len(tc) > 1 else 0.0
    return {"per_k": per_k, "max": max(per_k.values()) if per_k else 0.0}


def defect_from_values(times, rho_c_series, rho_r_series, k_list, gamma: float, grid: Grid) -> dict:
    """Same as :func:`oscillation_defect` for raw value series on one grid."""
    times = np.asarray(times, dtype=float)
    per_k = {}
    for k in k_list:
        series = np.array([defect_integrand(a, b, k, gamma, grid)
                           for a, b in zip(rho_c_series, rho_r_series)])
        per_k[float(k)] = float(np.trapezoid(series, times)) if len(times) > 1 else 0.0
    return {"per_k": per_k, "max": max(per_k.values()) if per_k else 0.0}


def plateau_ratio(values) -> float:
    """``max / min`` of positive values (``inf`` when the minimum vanishes)."""
    v = np.asarray(list(values), dtype=float)
    lo = float(v.min())
    return float(v.max() / lo) if lo > 0 else float("inf")
