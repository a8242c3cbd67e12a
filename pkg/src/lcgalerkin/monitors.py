"""Runtime checks on trajectories: energy ledger, maximum principle, weak and
renormalised residuals, and monitor record emission.

Monitors are observers for :func:`lcgalerkin.solver.simulate`. Each one
receives every completed :class:`~lcgalerkin.solver.StepInfo` and keeps only
the scalars or low-mode pairings it needs, so memory does not grow with the
grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import noise as nz
from . import spectral as sp
from . import tensor as tn
from .solver import (GridFields, NumericalFailure, RegularizationParams, State, StepInfo,
                     Stepper, ericksen_parity, pressure, state_fields)
from .spectral import COS, SIN, Grid


# ---------------------------------------------------------------- records

@dataclass
class MonitorRecord:
    time: float
    name: str
    value: float
    tolerance: float | None
    passed: bool | None

    def to_json(self) -> str:
        d = {"time": self.time, "name": self.name, "value": _num(self.value),
             "tolerance": _num(self.tolerance), "pass": self.passed}
        return json.dumps(d, sort_keys=False)


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def write_ndjson(path, records: Iterable[MonitorRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


# ---------------------------------------------------------------- energy

def energy_parts(stp: Stepper, st: State, gf: GridFields | None = None) -> dict[str, float]:
    """Components of the total energy; ``rho|u|^2`` is the exact ``<M[rho]u, u>``."""
    p, g = stp.params, stp.grid
    gf = stp.grid_fields(st) if gf is None else gf
    rho = gf.rho
    q2 = tn.norm2(gf.q)
    return {
        "kinetic": float(np.sum(st.m * st.u)),
        "concentration": float(np.sum(st.c ** 2)),
        "pressure_beta": float(g.integrate(2.0 * p.delta / (p.beta - 1.0) * np.abs(rho) ** p.beta)),
        "pressure_gamma": float(g.integrate(2.0 / (p.gamma - 1.0) * np.abs(rho) ** p.gamma)),
        "q_l2": float(np.sum(tn.frob(st.q, st.q))),
        "q_grad": float(np.sum(stp.k2 * tn.frob(st.q, st.q))),
        "q_quartic": float(g.integrate(0.5 * p.c_star * q2 * q2)),
    }


def energy_functional(stp: Stepper, st: State, gf: GridFields | None = None) -> float:
    return float(sum(energy_parts(stp, st, gf).values()))


def dissipation_rate(stp: Stepper, st: State, gf: GridFields | None = None,
                     c_coeffs: np.ndarray | None = None) -> float:
    """Dissipation density integrated over the box (per unit time).

    ``c_coeffs`` overrides the concentration used in the ``|grad c|^2`` term
    (the ledger passes the Crank-Nicolson midpoint).
    """
    p, g = stp.params, stp.grid
    gf = stp.grid_fields(st) if gf is None else gf
    c = st.c if c_coeffs is None else c_coeffs
    k2 = stp.k2
    grad_u = float(np.sum(k2 * st.u ** 2))
    div_u = stp.div_norm2(st.u)
    grad_c = float(np.sum(k2 * c ** 2))
    qq = tn.frob(st.q, st.q)
    grad_q = float(np.sum(k2 * qq))
    lap_q = float(np.sum(k2 * k2 * qq))
    q2 = tn.norm2(gf.q)
    bulk = float(g.integrate(p.c_star * q2 ** 2 + p.c_star ** 2 * q2 ** 3))
    out = (2.0 * p.mu1 * grad_u + 2.0 * (p.mu1 + p.mu2) * div_u + 2.0 * grad_c
           + 2.0 * p.Gamma * (grad_q + lap_q) + 2.0 * p.Gamma * bulk)
    if p.eps != 0.0:
        rho = gf.rho
        w = p.gamma * np.abs(rho) ** (p.gamma - 2.0) + p.delta * p.beta * np.abs(rho) ** (p.beta - 2.0)
        out += 2.0 * p.eps * float(g.integrate(w * np.sum(gf.grad_rho ** 2, axis=0)))
    return out


def dissipation_increment(stp: Stepper, st: State, dt: float, gf: GridFields | None = None,
                          c_coeffs: np.ndarray | None = None) -> float:
    return dt * dissipation_rate(stp, st, gf, c_coeffs)


# ---------------------------------------------------------------- J terms

def _exact(values, parity, grid) -> float:
    return float(sp.integrate_exact(values, parity, grid))


def j_terms(stp: Stepper, st: State, factor: int = 4) -> dict[str, float]:
    """Right-hand-side terms of the energy identity, integrated on a grid
    ``factor`` times finer so the polynomial ones are exact.

    ``J13`` uses the coefficient that follows from testing the Q equation
    with ``-(lap Q - Q - c* Q tr Q^2)``.
    """
    p, d = stp.params, stp.d
    fine = Grid(tuple(factor * N for N in stp.grid.n_points), stp.grid.lengths)
    f = state_fields(st, stp.grid, fine)
    CC = (COS,) * d
    P = [sp.stress_parity(d, j) for j in range(d)]
    F = [sp.flux_parity(d, j) for j in range(d)]
    rho, u, gu, c = f.rho, f.u, f.gu, f.c
    q, gq, lq = f.q, f.grad_q, f.lap_q
    q2 = tn.norm2(q)
    W = lq - q - p.c_star * q * q2
    # grad |u|^2, done spectrally
    uu = sp.forward(np.sum(u * u, axis=0), CC, fine)
    grad_uu = sp.inverse_batch([(sp.derivative(uu, CC, j, fine)[0], F[j]) for j in range(d)], fine)
    J = {}
    J["J1"] = -sum(_exact(grad_uu[j] * rho * u[j], P[j], fine) for j in range(d))
    J["J2"] = p.eps * sum(_exact(grad_uu[j] * f.grad_rho[j], CC, fine) for j in range(d))
    J["J3"] = 2.0 * sum(_exact(rho * u[i] * u[j] * gu[i, j], P[j], fine)
                        for i in range(d) for j in range(d))
    J["J4"] = -2.0 * p.eps * sum(_exact(gu[i, j] * f.grad_rho[j] * u[i], CC, fine)
                                 for i in range(d) for j in range(d))
    E = tn.ericksen_stress(gq)
    Fq = tn.free_energy_density(q, gq, p.lc)
    S = tn.commutator_stress(q, lq)
    A = tn.active_stress(c, q, 1.0)
    J["J5"] = 2.0 * sum(_exact((E[i, j] - (Fq if i == j else 0.0)) * gu[i, j],
                               P[j] if i == j else P[i], fine)
                        for i in range(d) for j in range(d))
    J["J6"] = -2.0 * sum(_exact(S[i, j] * gu[i, j], P[j], fine) for i in range(d) for j in range(d))
    J["J7"] = -2.0 * p.sigma_star * sum(_exact(A[i, j] * gu[i, j], P[j], fine)
                                        for i in range(d) for j in range(d))
    J["J8"] = -2.0 * sum(_exact(c * u[j] * f.grad_c[j], P[j], fine) for j in range(d))
    J["J9"] = 2.0 * sum(_exact(u[j] * tn.frob(gq[j], W), P[j], fine) for j in range(d))
    j10 = 0.0
    for j in range(d):
        gj = np.zeros((3, 3) + fine.shape)
        for i in range(d):
            gj[i, j] = gu[i, j]
        R = tn.rotation_term(tn.vorticity_tensor(gj), q)
        j10 += _exact(np.einsum("ij...,ij...->...", R, tn.to_matrix(W)), P[j], fine)
    J["J10"] = -2.0 * j10
    J["J11"] = p.Gamma * _exact((c - p.c_star) * tn.frob(q, W), CC, fine)
    J["J12"] = -2.0 * p.b * p.Gamma * _exact(tn.frob(tn.q_squared_traceless(q), W), CC, fine)
    J["J13"] = 4.0 * p.c_star * p.Gamma * _exact(q2 * tn.frob(q, lq), CC, fine)
    return J


SOURCE_TERMS = ("J7", "J8", "J11", "J12", "J13")


def j_cancellations(J: dict[str, float]) -> dict[str, float]:
    return {"J1+J3": J["J1"] + J["J3"], "J2+J4": J["J2"] + J["J4"],
            "J5+J9": J["J5"] + J["J9"], "J6+J10": J["J6"] + J["J10"]}


def energy_source(stp: Stepper, st: State, factor: int = 2) -> float:
    J = j_terms(stp, st, factor)
    return float(sum(J[k] for k in SOURCE_TERMS))


# ---------------------------------------------------------------- ledger

@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping.

    ``R(t) = E(t) + D(t) - E(0) - I(t) - S(t)``. ``src`` accumulates the
    sign-indefinite right-hand-side terms (trapezoid in time) when
    ``track_sources`` is on, so ``R - src`` isolates the discretisation
    error.
    """

    track_sources: bool = False
    source_factor: int = 2
    t: list = field(default_factory=list)
    E: list = field(default_factory=list)
    D: list = field(default_factory=list)
    I: list = field(default_factory=list)
    S: list = field(default_factory=list)
    src: list = field(default_factory=list)
    _last_src: float = 0.0

    def start(self, stp: Stepper, st: State, gf: GridFields):
        self.stepper = stp
        self.t = [st.t]
        self.E = [energy_functional(stp, st, gf)]
        self.D = [0.0]
        self.I = [0.0]
        self.S = [0.0]
        self.src = [0.0]
        if self.track_sources:
            self._last_src = energy_source(stp, st, self.source_factor)

    def __call__(self, info: StepInfo):
        stp_dt = info.dt
        new = info.after
        stp = self.stepper
        c_mid = 0.5 * (info.before.c + new.c)
        self.t.append(new.t)
        self.E.append(energy_functional(stp, new, info.gf_after))
        self.D.append(self.D[-1] + dissipation_increment(stp, new, stp_dt, info.gf_after, c_mid))
        self.I.append(self.I[-1] + info.ito)
        self.S.append(self.S[-1] + info.mart)
        if self.track_sources:
            s_new = energy_source(stp, new, self.source_factor)
            self.src.append(self.src[-1] + 0.5 * stp_dt * (self._last_src + s_new))
            self._last_src = s_new
        else:
            self.src.append(float("nan"))

    def residual(self) -> np.ndarray:
        E = np.asarray(self.E)
        return E + np.asarray(self.D) - E[0] - np.asarray(self.I) - np.asarray(self.S)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {"t": np.asarray(self.t), "E": np.asarray(self.E), "D": np.asarray(self.D),
                "I": np.asarray(self.I), "S": np.asarray(self.S), "R": self.residual(),
                "src": np.asarray(self.src)}


def energy_inequality_residual(ledger: EnergyLedger, t: float | None = None) -> float:
    """``R(t)`` at the last recorded time not after ``t`` (default: final)."""
    R = ledger.residual()
    if t is None:
        return float(R[-1])
    idx = int(np.searchsorted(np.asarray(ledger.t), t + 1e-12, side="right")) - 1
    return float(R[max(idx, 0)])


# ---------------------------------------------------------------- max principle

def max_principle_check(c_values, c_lo: float, c_hi: float) -> float:
    c_values = np.asarray(c_values)
    return float(max(0.0, c_lo - float(c_values.min()), float(c_values.max()) - c_hi))


@dataclass
class OvershootMonitor:
    c_lo: float
    c_hi: float
    worst: float = 0.0
    series: list = field(default_factory=list)

    def start(self, stp, st, gf):
        self.worst = max_principle_check(gf.c, self.c_lo, self.c_hi)
        self.series = [(st.t, self.worst)]

    def __call__(self, info: StepInfo):
        v = max_principle_check(info.gf_after.c, self.c_lo, self.c_hi)
        self.worst = max(self.worst, v)
        self.series.append((info.after.t, v))


# ---------------------------------------------------------------- T_k cut-offs

def _T(z):
    z = np.asarray(z, dtype=float)
    return np.where(z <= 1.0, z, np.where(z >= 3.0, 2.0, 2.0 - (z - 3.0) ** 2 / 4.0))


def _dT(z):
    z = np.asarray(z, dtype=float)
    return np.where(z <= 1.0, 1.0, np.where(z >= 3.0, 0.0, -(z - 3.0) / 2.0))


def _d2T(z):
    z = np.asarray(z, dtype=float)
    return np.where((z > 1.0) & (z < 3.0), -0.5, 0.0)


def cutoff_Tk(z, k: float):
    """``T_k(z) = k T(z/k)``: identity below ``k``, concave quadratic blend, ``2k`` above ``3k``."""
    if not k >= 1:
        raise ValueError("cut-off level k must be >= 1")
    return k * _T(np.asarray(z, dtype=float) / k)


@dataclass(frozen=True)
class Renormalizer:
    """A renormalising function with its first two derivatives."""

    b: Callable
    db: Callable
    d2b: Callable
    name: str = "b"

    @classmethod
    def tk(cls, k: float) -> "Renormalizer":
        if not k >= 1:
            raise ValueError("cut-off level k must be >= 1")
        return cls(lambda z: k * _T(z / k), lambda z: _dT(z / k), lambda z: _d2T(z / k) / k,
                   f"T_{k:g}")

    @classmethod
    def constant(cls, value: float) -> "Renormalizer":
        return cls(lambda z: np.full_like(np.asarray(z, dtype=float), value),
                   lambda z: np.zeros_like(np.asarray(z, dtype=float)),
                   lambda z: np.zeros_like(np.asarray(z, dtype=float)), f"const_{value:g}")

    def check_flat(self, z_large: float = 1e6) -> None:
        """Reject ``b`` whose derivative does not vanish for large arguments."""
        zs = np.geomspace(z_large, 10 * z_large, 8)
        if np.any(np.abs(self.db(zs)) > 0.0):
            raise ValueError(f"renormalising function {self.name} is not flat for large z")


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class TestFunctionSet:
    """Low trigonometric modes used as test functions.

    Scalars (density, concentration) use cosine modes with every index
    ``<= kmax``; velocity uses sine modes ``1..kmax`` per axis and
    component; Q uses cosine modes per independent component.
    """

    d: int
    kmax: int = 2

    def scalar_index(self):
        rng = [np.arange(0, self.kmax + 1)] * self.d
        return np.array(np.meshgrid(*rng, indexing="ij")).reshape(self.d, -1).T

    def vector_index(self):
        rng = [np.arange(1, self.kmax + 1)] * self.d
        return np.array(np.meshgrid(*rng, indexing="ij")).reshape(self.d, -1).T

    def pick_scalar(self, coeffs: np.ndarray) -> np.ndarray:
        """Pairings of a cosine-coefficient array (leading axes kept) with the scalar tests."""
        idx = self.scalar_index()
        return coeffs[(Ellipsis,) + tuple(idx.T)]

    def pick_vector(self, coeffs: np.ndarray) -> np.ndarray:
        idx = self.vector_index()
        return coeffs[(Ellipsis,) + tuple(idx.T)]


# ---------------------------------------------------------------- weak residuals

EQUATIONS = ("density", "concentration", "qtensor", "momentum")


class WeakRecorder:
    """Records the pairings of every term of the four weak identities.

    The terms are re-assembled on a grid ``factor`` times finer than the
    solver's, with derivatives moved onto the test functions, so the check
    does not reuse the solver's assembly. Time integrals use the trapezoid
    rule over step levels; the stochastic integral is the left-point Ito sum
    with the limit-form coefficient ``rho f``.
    """

    def __init__(self, stp: Stepper, tests: TestFunctionSet | None = None, factor: int = 2,
                 renormalizers: Iterable[Renormalizer] = ()):
        self.stp = stp
        self.p = stp.params
        self.d = stp.d
        self.tests = tests or TestFunctionSet(stp.d)
        self.fine = Grid(tuple(factor * N for N in stp.grid.n_points), stp.grid.lengths)
        self.renorm = list(renormalizers)
        for r in self.renorm:
            r.check_flat()
        self.CC = (COS,) * self.d
        self.SS = (SIN,) * self.d
        self.F = [sp.flux_parity(self.d, j) for j in range(self.d)]
        self.P = [sp.stress_parity(self.d, j) for j in range(self.d)]
        self.kap = [self.fine.kappa(a) for a in range(self.d)]
        model = stp.noise
        self.psi_fine = model.shape_values(self.fine) if model.n_modes else None
        self.t: list[float] = []
        self.state_pair: dict[str, list] = {e: [] for e in EQUATIONS}
        self.rate: dict[str, list] = {e: [] for e in EQUATIONS}
        self.noise_sum = None
        self.noise_sum_galerkin = None
        self.renorm_state: dict[str, list] = {r.name: [] for r in self.renorm}
        self.renorm_rate: dict[str, list] = {r.name: [] for r in self.renorm}

    # -- projections on the fine grid, restricted to the test modes
    def _proj(self, values, natural, target):
        return sp.project_values(values, natural, target, self.fine, self.tests.kmax)

    def _scalar(self, coeffs):
        return self.tests.pick_scalar(coeffs)

    def _vector(self, coeffs):
        return self.tests.pick_vector(coeffs)

    def _record(self, st: State):
        stp, p, d = self.stp, self.p, self.d
        f = state_fields(st, stp.grid, self.fine)
        CC, SS, F, P, kap = self.CC, self.SS, self.F, self.P, self.kap
        fine = self.fine
        pad = lambda a: sp._pad(a, stp.grid, fine)
        k2 = fine.kappa2
        rho_c, c_c, q_c, u_c = pad(st.rho), pad(st.c), pad(st.q), pad(st.u)

        # density: d/dt <rho, l> = <rho u, grad l> - eps <grad rho, grad l>
        lhs = self._scalar(self._proj(f.rho, CC, CC))
        rate = np.zeros_like(lhs)
        for i in range(d):
            rate += self._scalar(-kap[i] * self._proj(f.rho * f.u[i], SS, F[i]))
        rate += self._scalar(-p.eps * k2 * rho_c)
        self.state_pair["density"].append(lhs)
        self.rate["density"].append(rate)

        # concentration: d/dt <c, l> = -<u.grad c, l> - <grad c, grad l>
        lhs = self._scalar(self._proj(f.c, CC, CC))
        rate = -self._scalar(sum(self._proj(f.u[i] * f.grad_c[i], P[i], CC) for i in range(d)))
        rate += self._scalar(-k2 * c_c)
        self.state_pair["concentration"].append(lhs)
        self.rate["concentration"].append(rate)

        # Q: d/dt <Q, Phi> = <-u.grad Q + Psi Q - Q Psi + Gamma (H - lap Q), Phi> - Gamma <grad Q, grad Phi>
        lhs = self._scalar(self._proj(f.q, CC, CC))
        local = tn.molecular_field(f.q, f.lap_q, f.c, p.lc) - f.lap_q
        acc = self._proj(p.Gamma * local, CC, CC)
        for j in range(d):
            gj = np.zeros((3, 3) + fine.shape)
            for i in range(d):
                gj[i, j] = f.gu[i, j]
            rot = tn.sym_traceless_project(tn.rotation_term(tn.vorticity_tensor(gj), f.q))
            acc = acc + self._proj(rot - f.u[j] * f.grad_q[j], P[j], CC)
        rate = self._scalar(acc) + self._scalar(-p.Gamma * k2 * q_c)
        self.state_pair["qtensor"].append(lhs)
        self.rate["qtensor"].append(rate)

        # momentum, tested with sine modes phi = e_i b_k
        lhs = self._vector(self._proj(f.rho * f.u, SS, SS))
        pres = pressure(f.rho, p)
        E = tn.ericksen_stress(f.grad_q)
        Fq = tn.free_energy_density(f.q, f.grad_q, p.lc)
        S = tn.commutator_stress(f.q, f.lap_q)
        A = tn.active_stress(f.c, f.q, p.sigma_star)
        rate = np.zeros_like(lhs)
        for i in range(d):
            acc = np.zeros(fine.shape)
            for j in range(d):
                # int G_ij d_j phi_i with d_j b^SS_k = kappa_j b^{P_j}_k
                G = f.rho * f.u[i] * f.u[j] - S[i, j] - A[i, j]
                if i == j:
                    G = G + pres - Fq + E[i, j]
                else:
                    acc = acc + kap[j] * self._proj(E[i, j], ericksen_parity(d, i, j), P[j])
                acc = acc + kap[j] * self._proj(G, CC, P[j])
            # viscous parts
            acc = acc - p.mu1 * k2 * u_c[i]
            lam = p.mu1 + p.mu2
            if lam != 0.0:
                div = sum(self._proj(f.gu[j, j], P[j], P[i]) for j in range(d))
                acc = acc - lam * kap[i] * div
            if p.eps != 0.0:
                acc = acc - p.eps * self._proj(sum(f.grad_rho[j] * f.gu[i, j] for j in range(d)),
                                               SS, SS)
            rate[i] = self._vector(acc)
        self.state_pair["momentum"].append(lhs)
        self.rate["momentum"].append(rate)

        for r in self.renorm:
            self._record_renorm(r, f)
        return f

    def _record_renorm(self, r: Renormalizer, f: GridFields):
        p, d = self.p, self.d
        CC, SS, F, P, kap = self.CC, self.SS, self.F, self.P, self.kap
        k2 = self.fine.kappa2
        b = r.b(f.rho)
        db = r.db(f.rho)
        lhs = self._scalar(self._proj(b, CC, CC))
        rate = np.zeros_like(lhs)
        for i in range(d):
            rate += self._scalar(-kap[i] * self._proj(b * f.u[i], SS, F[i]))
        w = db * f.rho - b
        rate -= self._scalar(sum(self._proj(w * f.gu[j, j], P[j], CC) for j in range(d)))
        if p.eps != 0.0:
            rate += self._scalar(-p.eps * k2 * self._proj(b, CC, CC))
            g2 = np.sum(f.grad_rho ** 2, axis=0)
            rate -= self._scalar(p.eps * self._proj(r.d2b(f.rho) * g2, CC, CC))
        self.renorm_state[r.name].append(lhs)
        self.renorm_rate[r.name].append(rate)

    def _noise_pairing(self, f: GridFields, dW) -> np.ndarray:
        gq = f.grad_q_norm()
        lf = nz.limit_forcing(f.rho, f.u, f.c, gq, dW, self.stp.noise, self.fine,
                              self.tests.kmax, self.psi_fine)
        return self._vector(lf)

    # -- observer protocol
    def start(self, stp, st, gf):
        self.t = [st.t]
        self._f = self._record(st)
        self.noise_sum = None

    def __call__(self, info: StepInfo):
        dW = info.dW
        if self.stp.noise.n_modes and dW is not None and np.any(dW):
            inc = self._noise_pairing(self._f, dW)
            gal = self._vector(info.xi)
            self.noise_sum = inc if self.noise_sum is None else self.noise_sum + inc
            self.noise_sum_galerkin = (gal if self.noise_sum_galerkin is None
                                       else self.noise_sum_galerkin + gal)
        self.t.append(info.after.t)
        self._f = self._record(info.after)

    # -- results
    def _trapz(self, series):
        arr = np.asarray(series)
        t = np.asarray(self.t)
        dt = np.diff(t).reshape((-1,) + (1,) * (arr.ndim - 1))
        return np.sum(0.5 * dt * (arr[1:] + arr[:-1]), axis=0)

    def residuals(self, equation: str) -> np.ndarray:
        """|LHS - RHS| per test function at the final recorded time."""
        if equation not in EQUATIONS:
            raise ValueError(f"unknown equation {equation!r}")
        lhs = np.asarray(self.state_pair[equation])
        res = lhs[-1] - lhs[0] - self._trapz(self.rate[equation])
        if equation == "momentum" and self.noise_sum is not None:
            res = res - self.noise_sum
        return np.abs(res)

    def renormalized(self, name: str) -> np.ndarray:
        lhs = np.asarray(self.renorm_state[name])
        return np.abs(lhs[-1] - lhs[0] - self._trapz(self.renorm_rate[name]))

    def forcing_gap(self) -> float:
        """Largest test pairing gap between the Galerkin and limit-form noise sums."""
        if self.noise_sum is None:
            return 0.0
        return float(np.max(np.abs(self.noise_sum - self.noise_sum_galerkin)))


def weak_residual(recorder: WeakRecorder, equation: str) -> np.ndarray:
    return recorder.residuals(equation)


def renormalized_residual(recorder: WeakRecorder, r: Renormalizer) -> float:
    return float(np.max(recorder.renormalized(r.name)))


# ---------------------------------------------------------------- checkpoint monitors

@dataclass
class CheckpointMonitor:
    """Emits monitor records every ``every`` steps."""

    stp: Stepper
    every: int = 10
    ledger: EnergyLedger | None = None
    records: list = field(default_factory=list)
    tol_structure: float = 1e-12
    tol_mass: float = 1e-10
    mass0: float = 0.0

    def start(self, stp, st, gf):
        self.mass0 = float(st.rho[(0,) * stp.d]) * stp.sqrt_vol
        self._emit(st, gf, None)

    def __call__(self, info: StepInfo):
        if info.after.step % self.every == 0 or info.report.halted:
            self._emit(info.after, info.gf_after, info)

    def _emit(self, st: State, gf: GridFields, info: StepInfo | None):
        p = self.stp.params
        t = st.t
        recs = self.records
        mass = float(st.rho[(0,) * self.stp.d]) * self.stp.sqrt_vol
        drift = abs(mass - self.mass0) / abs(self.mass0) if self.mass0 else 0.0
        recs.append(MonitorRecord(t, "mass_drift", drift, self.tol_mass, drift <= self.tol_mass))
        ov = max_principle_check(gf.c, p.c_lo, p.c_hi)
        recs.append(MonitorRecord(t, "c_overshoot", ov, None, None))
        rmin = float(gf.rho.min())
        recs.append(MonitorRecord(t, "rho_min", rmin, 0.0, rmin > 0))
        if info is not None:
            rep = info.report
            recs.append(MonitorRecord(t, "q_structure", rep.q_structure_residual,
                                      self.tol_structure,
                                      rep.q_structure_residual <= self.tol_structure))
            lo, hi = rep.envelope_lo, rep.envelope_hi
            ok = rep.rho_min >= lo - 1e-8 and rep.rho_max <= hi + 1e-8
            recs.append(MonitorRecord(t, "density_envelope", rep.rho_min - lo, 1e-8, bool(ok)))
            recs.append(MonitorRecord(t, "u_l2", rep.u_l2, p.K, rep.u_l2 < p.K))
        if self.ledger is not None and len(self.ledger.E) > 0:
            E0 = self.ledger.E[0]
            R = float(self.ledger.residual()[-1])
            recs.append(MonitorRecord(t, "energy", float(self.ledger.E[-1]), None, None))
            recs.append(MonitorRecord(t, "energy_residual", R, 1e-6 * E0, R <= 1e-6 * E0))
            D = self.ledger.D
            mono = all(b >= a for a, b in zip(D[:-1], D[1:]))
            recs.append(MonitorRecord(t, "dissipation_monotone", float(D[-1]), None, mono))
