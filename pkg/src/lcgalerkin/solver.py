"""Operator-split Galerkin time stepper for the regularised system.

Unknowns (all band-limited to modes ``<= n`` per axis):

* ``rho``: cosine coefficients of the density,
* ``u``: sine coefficients of the velocity, ``m = M[rho] u`` kept alongside,
* ``c``: cosine coefficients of the concentration,
* ``q``: cosine coefficients of the five Q-tensor components.

One step of length ``dt`` evaluates every explicit term on the state at the
start of the step, then updates in the order density, concentration, Q,
momentum:

    rho' = exp(eps lap dt) (rho - dt div(rho u))          integrating factor
    c'   = CN heat step with explicit advection
    Q'   = implicit Gamma lap, explicit transport/rotation/bulk terms
    (M[rho'] + dt A) u' = M[rho] u + dt N + xi             A = viscous form

``xi`` is the Galerkin noise increment. Products are evaluated on the
collocation grid in their natural parity and re-expanded exactly into the
target basis (see ``spectral.to_parity``).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import noise as nz
from . import spectral as sp
from . import tensor as tn
from .spectral import COS, SIN, Grid


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class NumericalFailure(FloatingPointError):
    """NaN/Inf, vacuum, envelope violation or solver breakdown."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class RegularizationParams:
    n: int = 32
    K: float = 10.0
    eps: float = 1e-2
    delta: float = 1e-2
    beta: float = 7.0
    gamma: float = 5.0 / 3.0
    Gamma: float = 1.0
    mu1: float = 1.0
    mu2: float = 0.0
    sigma_star: float = 1.0
    c_star: float = 1.0
    b: float = 1.0
    dt: float = 1e-3
    T: float = 0.5
    c_lo: float = 0.5
    c_hi: float = 1.5

    def __post_init__(self):
        bad = []
        if self.n < 1:
            bad.append("n >= 1")
        if not self.K > 0:
            bad.append("K > 0")
        if self.eps < 0:
            bad.append("eps >= 0")
        if self.delta < 0:
            bad.append("delta >= 0")
        if not self.gamma > 1.5:
            bad.append("gamma > 3/2")
        if not self.beta > max(6.0, self.gamma):
            bad.append("beta > max(6, gamma)")
        if self.mu1 < 0:
            bad.append("mu1 >= 0")
        if 2 * self.mu1 + 3 * self.mu2 < 0:
            bad.append("2 mu1 + 3 mu2 >= 0")
        if not self.Gamma > 0:
            bad.append("Gamma > 0")
        if not self.dt > 0:
            bad.append("dt > 0")
        if not self.T > 0:
            bad.append("T > 0")
        if self.c_star < 0:
            bad.append("c_star >= 0")
        if not self.c_lo <= self.c_hi:
            bad.append("c_lo <= c_hi")
        if bad:
            raise ConfigError("parameter constraints violated: " + ", ".join(bad))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def lc(self) -> tn.LCParams:
        return tn.LCParams(self.Gamma, self.c_star, self.b, self.sigma_star)

    def with_(self, **kw) -> "RegularizationParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class State:
    rho: np.ndarray
    u: np.ndarray
    m: np.ndarray
    c: np.ndarray
    q: np.ndarray
    t: float = 0.0
    step: int = 0

    def copy(self) -> "State":
        return State(self.rho.copy(), self.u.copy(), self.m.copy(), self.c.copy(),
                     self.q.copy(), self.t, self.step)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"rho": self.rho, "u": self.u, "m": self.m, "c": self.c, "q": self.q}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


@dataclass
class GridFields:
    """Collocation values of a state and the derivatives the step needs."""

    rho: np.ndarray
    grad_rho: np.ndarray   # (d, ...)
    u: np.ndarray          # (d, ...)
    gu: np.ndarray         # (d, d, ...), gu[i, j] = d_j u_i
    c: np.ndarray
    grad_c: np.ndarray     # (d, ...)
    q: np.ndarray          # (5, ...)
    grad_q: np.ndarray     # (d, 5, ...)
    lap_q: np.ndarray      # (5, ...)

    @property
    def div_u(self) -> np.ndarray:
        return sum(self.gu[i, i] for i in range(self.u.shape[0]))

    def grad_q_norm(self) -> np.ndarray:
        return np.sqrt(sum(tn.norm2(self.grad_q[a]) for a in range(self.grad_q.shape[0])))


@dataclass
class StepReport:
    step: int
    t: float
    u_l2: float
    grad_u_l2: float
    rho_lgamma: float
    rho_lbeta: float
    c_l2: float
    grad_c_l2: float
    q_h1: float
    lap_q_l2: float
    forcing_integral_l2: float
    sup_u_l2: float
    rho_min: float
    rho_max: float
    div_u_sup: float
    envelope_lo: float
    envelope_hi: float
    q_structure_residual: float
    cg_iterations: int
    halted: bool
    wall_time: float

    def norms(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("u_l2", "grad_u_l2", "rho_lgamma", "rho_lbeta",
                                               "c_l2", "grad_c_l2", "q_h1", "lap_q_l2")}


@dataclass
class StepInfo:
    """Everything an observer may need about one completed step."""

    before: State
    after: State
    gf_before: GridFields
    gf_after: GridFields
    dt: float
    dW: np.ndarray
    xi: np.ndarray
    rho_rhs: np.ndarray   # -div(rho u) at the start
    c_rhs: np.ndarray     # -P(u . grad c)
    q_rhs: np.ndarray     # explicit Q terms (without Gamma lap Q)
    mom_rhs: np.ndarray   # explicit momentum functional (without viscosity)
    ito: float            # <xi, (M' + dt A)^-1 xi>
    mart: float           # 2 <xi, u'_det>
    report: StepReport


def frob_coeffs(a: np.ndarray, b: np.ndarray) -> float:
    """Sum over modes of the Frobenius product of 5-component coefficient arrays."""
    return float(np.sum(tn.frob(a, b)))


class Stepper:
    """Precomputed operators for one grid, parameter set and noise model."""

    def __init__(self, grid: Grid, params: RegularizationParams,
                 noise_model: nz.NoiseModel | None = None,
                 cg_tol: float = 1e-12, cg_maxiter: int = 500, dense_limit: int = 600):
        if params.n > grid.n_points[0] - 1 or any(params.n > N - 1 for N in grid.n_points):
            raise ConfigError("Galerkin modes n must be below the grid size")
        self.grid = grid
        self.params = params
        self.noise = noise_model if noise_model is not None else nz.NoiseModel(n_modes=0)
        if self.noise.gamma != params.gamma:
            self.noise = replace(self.noise, gamma=params.gamma)
        self.psi = self.noise.shape_values(grid) if self.noise.n_modes else None
        self.d = grid.d
        self.mask = grid.mode_mask(params.n)
        self.CC = (COS,) * self.d
        self.SS = (SIN,) * self.d
        self.F = [sp.flux_parity(self.d, j) for j in range(self.d)]
        self.P = [sp.stress_parity(self.d, j) for j in range(self.d)]
        self.kap = [grid.kappa(a) for a in range(self.d)]
        self.k2 = grid.kappa2
        self.k2_b = self.block(self.k2)
        self._syn, self._ana = [], []
        for a in range(self.d):
            x = grid.points(a)
            L = grid.lengths[a]
            k = np.arange(params.n + 1)
            B = np.sqrt(2.0 / L) * np.sin(np.pi * np.outer(x, k) / L)
            B[:, 0] = 0.0
            self._syn.append(B)                                  # coeffs -> values
            self._ana.append(B.T * (L / grid.n_points[a]))       # values -> coeffs
        self.kap_b = [self.block(np.broadcast_to(k, grid.shape)) for k in self.kap]
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        # small spaces: assemble and factor instead of iterating
        self.dense = self.d * params.n ** self.d <= dense_limit
        self._visc_mat = None
        self._syn_kron = None
        self._fac_key = None
        self._set_dt(params.dt)
        self.sqrt_vol = math.sqrt(grid.volume)
        # running quantities for the density envelope
        self.div_integral = 0.0

    # ------------------------------------------------------------ helpers
    def _set_dt(self, dt: float):
        p = self.params
        self.dt = dt
        self.heat_rho = np.exp(-p.eps * self.k2 * dt)
        self.cn_num = 1.0 - 0.5 * dt * self.k2
        self.cn_den = 1.0 + 0.5 * dt * self.k2
        self.q_den = 1.0 + p.Gamma * dt * self.k2

    def project(self, values, natural, target) -> np.ndarray:
        return sp.project_values(values, natural, target, self.grid, self.params.n)

    def zero_state(self) -> State:
        g = self.grid
        z = np.zeros(g.shape)
        return State(z.copy(), np.zeros((self.d,) + g.shape), np.zeros((self.d,) + g.shape),
                     z.copy(), np.zeros((5,) + g.shape))

    def grid_fields(self, st: State) -> GridFields:
        return state_fields(st, self.grid, self.grid)

    def values(self, coeffs, parity) -> np.ndarray:
        return sp.inverse(coeffs, parity, self.grid)

    # ------------------------------------------------------------ operators
    def block(self, full: np.ndarray) -> np.ndarray:
        """Retained modes ``<= n`` on every axis."""
        sl = (Ellipsis,) + (slice(0, self.params.n + 1),) * self.d
        return full[sl]

    def unblock(self, blk: np.ndarray) -> np.ndarray:
        out = np.zeros(blk.shape[: blk.ndim - self.d] + self.grid.shape)
        sl = (Ellipsis,) + (slice(0, self.params.n + 1),) * self.d
        out[sl] = blk
        return out

    def _mass_block(self, rho_vals: np.ndarray, ub: np.ndarray) -> np.ndarray:
        # dense sine synthesis/analysis on the retained block; same quadrature as the DST
        lead = ub.ndim - self.d
        v = ub
        for a in range(self.d):
            v = sp._apply_along(self._syn[a], v, lead + a)
        v = rho_vals * v
        for a in range(self.d):
            v = sp._apply_along(self._ana[a], v, lead + a)
        return v

    def _viscous_block(self, ub: np.ndarray) -> np.ndarray:
        p = self.params
        out = p.mu1 * self.k2_b * ub
        lam = p.mu1 + p.mu2
        if lam != 0.0:
            size = p.n + 1
            parts = [self.kap_b[j] * ub[j] for j in range(self.d)]  # d_j u_j in parity P_j
            for i in range(self.d):
                s = parts[i]
                for j in range(self.d):
                    if j != i:
                        s = s + sp.to_parity_block(parts[j], self.P[j], self.P[i], size)
                out[i] = out[i] + lam * self.kap_b[i] * s
        return out

    def apply_mass(self, rho_vals: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``M[rho] u`` on X_n (exact for band-limited rho under the 2/3 rule)."""
        return self.unblock(self._mass_block(rho_vals, self.block(u)))

    def apply_viscous(self, u: np.ndarray) -> np.ndarray:
        """Weak form of ``-mu1 lap u - (mu1+mu2) grad div u`` on X_n."""
        return self.unblock(self._viscous_block(self.block(u)))

    def div_u_cc(self, u: np.ndarray) -> np.ndarray:
        """Cosine coefficients (modes < N) of ``div u``; exact up to truncation at N."""
        tot = np.zeros(self.grid.shape)
        for j in range(self.d):
            tot = tot + sp.to_parity(self.kap[j] * u[j], self.P[j], self.CC, self.grid)
        return tot

    def div_norm2(self, u: np.ndarray) -> float:
        """``||div u||^2`` computed exactly with cross-parity Gram matrices."""
        ub = self.block(u)
        size = self.params.n + 1
        parts = [self.kap_b[j] * ub[j] for j in range(self.d)]
        s = 0.0
        for i in range(self.d):
            s += float(np.sum(parts[i] ** 2))
            for j in range(i + 1, self.d):
                s += 2.0 * float(np.sum(parts[i] * sp.to_parity_block(parts[j], self.P[j], self.P[i], size)))
        return s

    def _active(self) -> tuple:
        return (slice(None),) + (slice(1, self.params.n + 1),) * self.d

    def _dense_viscous(self) -> np.ndarray:
        if self._visc_mat is None:
            n, d = self.params.n, self.d
            dim = d * n ** d
            eye = np.zeros((dim, d) + (n + 1,) * d)
            act = (slice(None),) + self._active()
            eye[act] = np.eye(dim).reshape((dim, d) + (n,) * d)
            cols = [self._viscous_block(e)[self._active()].ravel() for e in eye]
            self._visc_mat = np.array(cols).T
        return self._visc_mat

    def _dense_mass(self, rho_vals: np.ndarray) -> np.ndarray:
        if self._syn_kron is None:
            S = self._syn[0][:, 1:]
            for B in self._syn[1:]:
                S = np.kron(S, B[:, 1:])
            self._syn_kron = S
        S = self._syn_kron
        w = rho_vals.ravel() * self.grid.cell_volume
        return S.T @ (w[:, None] * S)

    def _solve_dense(self, rho_vals: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        act = self._active()
        key = (rho_vals.tobytes(), self.dt)
        if self._fac_key != key:
            m = self._dense_mass(rho_vals)
            mat = self.dt * self._dense_viscous()
            b = m.shape[0]
            for c in range(self.d):
                mat[c * b:(c + 1) * b, c * b:(c + 1) * b] += m
            try:
                self._fac = cho_factor(mat, overwrite_a=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure("momentum operator lost positivity") from exc
            self._fac_key = key
        x = cho_solve(self._fac, self.block(rhs)[act].ravel(), check_finite=False)
        out = np.zeros((self.d,) + self.grid.shape)
        out[act] = x.reshape((self.d,) + (self.params.n,) * self.d)
        return out

    def solve_momentum(self, rho_vals: np.ndarray, rhs: np.ndarray, x0: np.ndarray | None = None,
                       tol: float | None = None) -> tuple[np.ndarray, int]:
        """Solve ``(M[rho] + dt A) x = rhs`` on X_n: Cholesky when small, else PCG."""
        if self.dense:
            return self._solve_dense(rho_vals, rhs), 0
        p = self.params
        tol = self.cg_tol if tol is None else tol
        rbar = float(np.mean(rho_vals))
        diag = rbar + self.dt * (p.mu1 * self.k2_b
                                 + (p.mu1 + p.mu2) * np.stack([k * k * np.ones(self.k2_b.shape)
                                                               for k in self.kap_b]))
        rhs = self.block(rhs)

        def op(x):
            return self._mass_block(rho_vals, x) + self.dt * self._viscous_block(x)

        bnorm = float(np.sqrt(np.sum(rhs * rhs)))
        if bnorm == 0.0:
            return np.zeros(rhs.shape[:1] + self.grid.shape), 0
        x = np.zeros_like(rhs) if x0 is None else self.block(x0).copy()
        r = rhs - op(x)
        z = r / diag
        pvec = z.copy()
        rz = float(np.sum(r * z))
        for it in range(1, self.cg_maxiter + 1):
            if math.sqrt(float(np.sum(r * r))) <= tol * bnorm:
                return self.unblock(x), it - 1
            ap = op(pvec)
            pap = float(np.sum(pvec * ap))
            if not pap > 0:
                raise NumericalFailure("momentum operator lost positivity in CG")
            alpha = rz / pap
            x = x + alpha * pvec
            r = r - alpha * ap
            z = r / diag
            rz_new = float(np.sum(r * z))
            pvec = z + (rz_new / rz) * pvec
            rz = rz_new
        res = math.sqrt(float(np.sum(r * r))) / bnorm
        if res <= 1e3 * tol:
            return self.unblock(x), self.cg_maxiter
        raise NumericalFailure("momentum CG did not converge", {"residual": res})

    # ------------------------------------------------------------ explicit terms
    def density_rhs(self, gf: GridFields) -> np.ndarray:
        """``-div(rho u)`` tested against cosine modes."""
        out = np.zeros(self.grid.shape)
        for i in range(self.d):
            flux = self.project(gf.rho * gf.u[i], self.SS, self.F[i])
            out = out + sp.derivative(flux, self.F[i], i, self.grid)[0]
        return -out

    def concentration_rhs(self, gf: GridFields) -> np.ndarray:
        """``-(u . grad c)`` tested against cosine modes."""
        out = np.zeros(self.grid.shape)
        for i in range(self.d):
            out = out + self.project(gf.u[i] * gf.grad_c[i], self.P[i], self.CC)
        return -out

    def qtensor_rhs(self, gf: GridFields) -> tuple[np.ndarray, float]:
        """Explicit Q terms: ``-(u.grad)Q + Psi Q - Q Psi + Gamma (H - lap Q)``.

        Returns the cosine coefficients and the largest departure of the
        assembled matrices from the symmetric traceless space.
        """
        p = self.params
        npts = int(np.prod(self.grid.shape))
        qf = np.ascontiguousarray(gf.q.reshape(5, npts))
        cf = np.ascontiguousarray(gf.c.reshape(npts))
        zero_g = np.zeros((3, 3, npts))
        loc, res = tn.q_local_rhs(qf, zero_g, cf, p.Gamma, p.c_star, p.b)
        out = self.project(loc.reshape((5,) + self.grid.shape), self.CC, self.CC)
        resid = res
        for j in range(self.d):
            gj = np.zeros((3, 3, npts))
            for i in range(self.d):
                gj[i, j] = gf.gu[i, j].reshape(npts)
            rot, r = tn.q_local_rhs(qf, gj, cf, 0.0, p.c_star, p.b)
            resid = max(resid, r)
            term = rot.reshape((5,) + self.grid.shape) - gf.u[j] * gf.grad_q[j]
            out = out + self.project(term, self.P[j], self.CC)
        return out, resid

    def stress(self, gf: GridFields, include_fluid: bool = True) -> np.ndarray:
        """Explicit stress ``G`` (d, d, ...) whose divergence enters the momentum equation."""
        p = self.params
        npts = int(np.prod(self.grid.shape))
        g = tn.stress_kernel(np.ascontiguousarray(gf.q.reshape(5, npts)),
                             np.ascontiguousarray(gf.lap_q.reshape(5, npts)),
                             np.ascontiguousarray(gf.grad_q.reshape(self.d, 5, npts)),
                             np.ascontiguousarray(gf.c.reshape(npts)), p.c_star, p.sigma_star)
        g = g.reshape((self.d, self.d) + self.grid.shape)
        if include_fluid:
            pres = pressure(gf.rho, p)
            for i in range(self.d):
                for j in range(self.d):
                    g[i, j] -= gf.rho * gf.u[i] * gf.u[j]
                g[i, i] -= pres
        return g

    def momentum_rhs(self, gf: GridFields, include_viscous_u: np.ndarray | None = None) -> np.ndarray:
        """Explicit part of the momentum functional tested against X_n.

        Convection, pressure, the Q/active stresses and the ``-eps grad rho . grad u``
        term. Pass the current velocity coefficients as ``include_viscous_u``
        to add the viscous part as well (used by diagnostics).
        """
        p = self.params
        g = self.stress(gf)
        # off-diagonal Ericksen entries d_iQ:d_jQ are odd in axes i and j
        eri = tn.ericksen_stress(gf.grad_q)
        out = np.zeros((self.d,) + self.grid.shape)
        for i in range(self.d):
            acc = np.zeros(self.grid.shape)
            for j in range(self.d):
                if i == j:
                    col = self.project(g[i, j], self.CC, self.P[j])
                else:
                    col = (self.project(g[i, j] + eri[i, j], self.CC, self.P[j])
                           - self.project(eri[i, j], ericksen_parity(self.d, i, j), self.P[j]))
                acc = acc + sp.derivative(col, self.P[j], j, self.grid)[0]
            out[i] = acc
        if p.eps != 0.0:
            eterm = np.zeros((self.d,) + self.grid.shape)
            for i in range(self.d):
                for j in range(self.d):
                    eterm[i] += gf.grad_rho[j] * gf.gu[i, j]
            out = out - p.eps * self.project(eterm, self.SS, self.SS)
        if include_viscous_u is not None:
            out = out - self.apply_viscous(include_viscous_u)
        return out

    def forcing(self, gf: GridFields, dW: np.ndarray) -> np.ndarray:
        """Galerkin noise increment ``sqrt(rho) P_n(sqrt(rho) f dW)`` in X_n."""
        if self.noise.n_modes == 0 or dW is None or not np.any(dW):
            return np.zeros((self.d,) + self.grid.shape)
        return galerkin_forcing(self, gf, dW)

    # ------------------------------------------------------------ sub-steps
    def advance_density(self, rho: np.ndarray, gf: GridFields) -> tuple[np.ndarray, np.ndarray]:
        rhs = self.density_rhs(gf)
        new = self.heat_rho * (rho + self.dt * rhs)
        return np.where(self.mask, new, 0.0), rhs

    def advance_concentration(self, c: np.ndarray, gf: GridFields) -> tuple[np.ndarray, np.ndarray]:
        rhs = self.concentration_rhs(gf)
        new = (self.cn_num * c + self.dt * rhs) / self.cn_den
        return np.where(self.mask, new, 0.0), rhs

    def advance_qtensor(self, q: np.ndarray, gf: GridFields) -> tuple[np.ndarray, np.ndarray, float]:
        rhs, resid = self.qtensor_rhs(gf)
        new = (q + self.dt * rhs) / self.q_den
        return np.where(self.mask, new, 0.0), rhs, resid

    def advance_momentum(self, st: State, gf: GridFields, rho_new_vals: np.ndarray,
                         dW: np.ndarray | None):
        """Solve for ``u'``; returns ``(u', m', N, xi, ito, mart, iterations)``."""
        N = self.momentum_rhs(gf)
        b = st.m + self.dt * N
        u_det, it1 = self.solve_momentum(rho_new_vals, b, x0=st.u)
        xi = self.forcing(gf, dW)
        ito = 0.0
        mart = 0.0
        it2 = 0
        u_new = u_det
        if np.any(xi):
            z, it2 = self.solve_momentum(rho_new_vals, xi, tol=max(self.cg_tol, 1e-10))
            ito = float(np.sum(xi * z))
            mart = 2.0 * float(np.sum(xi * u_det))
            u_new = u_det + z
        u_new = sp.truncate_Tr(u_new, self.params.K)
        u_new = np.where(self.mask, u_new, 0.0)
        m_new = self.apply_mass(rho_new_vals, u_new)
        return u_new, m_new, N, xi, ito, mart, it1 + it2

    # ------------------------------------------------------------ full step
    def step(self, st: State, dW: np.ndarray | None = None, gf: GridFields | None = None,
             tracker: "RunTracker | None" = None) -> tuple[State, StepInfo]:
        t0 = time.perf_counter()
        p = self.params
        if gf is None:
            gf = self.grid_fields(st)
        if dW is None:
            dW = np.zeros(self.noise.n_modes)
        rho_new, rho_rhs = self.advance_density(st.rho, gf)
        rho_new_vals = self.values(rho_new, self.CC)
        div_sup = float(np.abs(gf.div_u).max())
        rmin = float(rho_new_vals.min())
        rmax = float(rho_new_vals.max())
        if not (np.isfinite(rmin) and rmin > 0):
            raise NumericalFailure("density left the positive cone (vacuum)",
                                   {"step": st.step, "rho_min": rmin})
        c_new, c_rhs = self.advance_concentration(st.c, gf)
        q_new, q_rhs, q_res = self.advance_qtensor(st.q, gf)
        u_new, m_new, N, xi, ito, mart, its = self.advance_momentum(st, gf, rho_new_vals, dW)
        new = State(rho_new, u_new, m_new, c_new, q_new, st.t + self.dt, st.step + 1)
        if not new.is_finite():
            raise NumericalFailure("non-finite state", {"step": new.step, "t": new.t})
        gf_new = self.grid_fields(new)
        tr = tracker if tracker is not None else RunTracker()
        tr.update(self, new, xi, div_sup)
        report = self.make_report(new, gf_new, tr, q_res, its, time.perf_counter() - t0)
        info = StepInfo(st, new, gf, gf_new, self.dt, dW, xi, rho_rhs, c_rhs, q_rhs, N, ito,
                        mart, report)
        return new, info

    def make_report(self, st: State, gf: GridFields, tr: "RunTracker", q_res: float, its: int,
                    wall: float) -> StepReport:
        p, g = self.params, self.grid
        rho = gf.rho
        lo, hi = tr.envelope(p)
        rep = StepReport(
            step=st.step, t=st.t,
            u_l2=float(np.sqrt(np.sum(st.u ** 2))),
            grad_u_l2=float(np.sqrt(np.sum(self.k2 * st.u ** 2))),
            rho_lgamma=float(g.integrate(np.abs(rho) ** p.gamma) ** (1.0 / p.gamma)),
            rho_lbeta=float(g.integrate(np.abs(rho) ** p.beta) ** (1.0 / p.beta)),
            c_l2=float(np.sqrt(np.sum(st.c ** 2))),
            grad_c_l2=float(np.sqrt(np.sum(self.k2 * st.c ** 2))),
            q_h1=float(np.sqrt(frob_coeffs(st.q, st.q) + frob_coeffs(st.q, self.k2 * st.q))),
            lap_q_l2=float(np.sqrt(frob_coeffs(self.k2 * st.q, self.k2 * st.q))),
            forcing_integral_l2=tr.forcing_norm,
            sup_u_l2=tr.sup_u,
            rho_min=float(rho.min()), rho_max=float(rho.max()),
            div_u_sup=tr.last_div_sup,
            envelope_lo=lo, envelope_hi=hi,
            q_structure_residual=q_res,
            cg_iterations=its,
            halted=check_stopping(tr, p.K),
            wall_time=wall,
        )
        vals = list(rep.norms().values())
        if not all(np.isfinite(vals)):
            raise NumericalFailure("non-finite norm in step report", rep.norms())
        return rep


def ericksen_parity(d: int, i: int, j: int) -> tuple[str, ...]:
    """Natural parity of ``d_i Q : d_j Q``."""
    return tuple(SIN if (a in (i, j) and i != j) else COS for a in range(d))


def state_fields(st: State, src: Grid, dst: Grid) -> GridFields:
    """Values of a state's fields and derivatives on ``dst`` (same box, at least as fine)."""
    d = src.d
    CC, SS = (COS,) * d, (SIN,) * d
    F = [sp.flux_parity(d, j) for j in range(d)]
    P = [sp.stress_parity(d, j) for j in range(d)]

    def up(a):
        return a if dst.shape == src.shape else sp._pad(a, src, dst)

    rho, u, c, q = up(st.rho), up(st.u), up(st.c), up(st.q)
    items = [(rho, CC), (u, SS), (c, CC), (q, CC), (-dst.kappa2 * q, CC)]
    for j in range(d):
        items.append((sp.derivative(rho, CC, j, dst)[0], F[j]))
        items.append((sp.derivative(u, SS, j, dst)[0], P[j]))
        items.append((sp.derivative(c, CC, j, dst)[0], F[j]))
        items.append((sp.derivative(q, CC, j, dst)[0], F[j]))
    vals = sp.inverse_batch(items, dst)
    rho_v, u_v, c_v, q_v, lap_q = vals[:5]
    rest = vals[5:]
    grad_rho = np.stack([rest[4 * j] for j in range(d)])
    gu = np.stack([rest[4 * j + 1] for j in range(d)], axis=1)  # gu[i, j] = d_j u_i
    grad_c = np.stack([rest[4 * j + 2] for j in range(d)])
    grad_q = np.stack([rest[4 * j + 3] for j in range(d)])
    return GridFields(rho_v, grad_rho, u_v, gu, c_v, grad_c, q_v, grad_q, lap_q)


def pressure(rho: np.ndarray, p: RegularizationParams) -> np.ndarray:
    return rho ** p.gamma + p.delta * rho ** p.beta


def galerkin_forcing(stp: Stepper, gf: GridFields, dW: np.ndarray) -> np.ndarray:
    return nz.stochastic_forcing(gf.rho, gf.u, gf.c, gf.grad_q_norm(), dW, stp.noise, stp.grid,
                                 stp.params.n, stp.psi)


@dataclass
class RunTracker:
    """Running suprema for the stopping rule and the density envelope."""

    sup_u: float = 0.0
    forcing_sum: np.ndarray | None = None
    forcing_norm: float = 0.0
    sup_forcing: float = 0.0
    div_integral: float = 0.0
    last_div_sup: float = 0.0
    rho_lo0: float = 0.0
    rho_hi0: float = 0.0

    def start(self, stp: Stepper, st: State, gf: GridFields | None = None):
        self.sup_u = float(np.sqrt(np.sum(st.u ** 2)))
        self.forcing_sum = np.zeros_like(st.u)
        self.forcing_norm = 0.0
        self.sup_forcing = 0.0
        self.div_integral = 0.0

    def update(self, stp: Stepper, new: State, xi: np.ndarray, div_sup: float):
        if self.forcing_sum is None:
            self.forcing_sum = np.zeros_like(new.u)
        self.forcing_sum = self.forcing_sum + xi
        self.forcing_norm = float(np.sqrt(np.sum(self.forcing_sum ** 2)))
        self.sup_forcing = max(self.sup_forcing, self.forcing_norm)
        self.sup_u = max(self.sup_u, float(np.sqrt(np.sum(new.u ** 2))))
        self.div_integral += stp.dt * div_sup
        self.last_div_sup = div_sup

    def envelope(self, p: RegularizationParams) -> tuple[float, float]:
        lo = p.delta * math.exp(-self.div_integral)
        hi = (p.delta ** (-1.0 / p.beta) if p.delta > 0 else math.inf) * math.exp(self.div_integral)
        return lo, hi


def check_stopping(tr: RunTracker, K: float) -> bool:
    """True once ``max(sup ||u||, sup ||int xi||) >= K`` (inclusive)."""
    return max(tr.sup_u, tr.sup_forcing) >= K


def truncation_idempotent_on(alpha: np.ndarray, K: float) -> bool:
    once = sp.truncate_Tr(alpha, K)
    return bool(np.array_equal(sp.truncate_Tr(once, K), once))


# ---------------------------------------------------------------- initial data

def smooth_clamp(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(x, lo, hi)


@dataclass
class MollifyInfo:
    momentum_error: float
    mass_shift: float
    rho_min: float
    rho_max: float


def mollify_initial_data(rho0: np.ndarray, m0: np.ndarray, delta: float, beta: float,
                         grid: Grid, n: int, smoothing: float | None = None
                         ) -> tuple[np.ndarray, np.ndarray, MollifyInfo]:
    """Regularised initial density and momentum.

    ``rho0`` and ``m0`` are grid values. The density is clamped into
    ``[delta, delta^(-1/beta)]``, smoothed by a short Neumann heat flow,
    truncated to X_n and finally mapped affinely back into the band if
    truncation ripple pushed it out. The momentum becomes
    ``h sqrt(rho_delta)`` with ``h`` the X_n projection of
    ``m0 / sqrt(rho0)``; the projection error is returned.
    Output: cosine coefficients of rho and grid values of m.
    """
    rho0 = np.asarray(rho0, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    if np.any(rho0 < 0):
        raise ConfigError("initial density must be non-negative")
    d = grid.d
    lo = delta if delta > 0 else 0.0
    hi = delta ** (-1.0 / beta) if delta > 0 else np.inf
    clamped = np.clip(rho0, lo, hi)
    coeffs = sp.forward(clamped, COS, grid)
    smooth = coeffs.copy()
    if smoothing is None:
        # remove what truncation would cut anyway; leaves smooth data untouched to ~1e-14
        smoothing = 0.0
    if smoothing > 0:
        smooth = smooth * np.exp(-smoothing * grid.kappa2)
    smooth = sp.project_coeffs(smooth, grid, n)
    vals = sp.inverse(smooth, COS, grid)
    vmin, vmax = float(vals.min()), float(vals.max())
    shift = 0.0
    if delta > 0 and (vmin < lo or vmax > hi):
        # affine map of [vmin, vmax] into [lo, hi]; constants stay in X_n
        new_min = max(vmin, lo)
        new_max = min(vmax, hi)
        a = (new_max - new_min) / (vmax - vmin) if vmax > vmin else 1.0
        vals = new_min + a * (vals - vmin)
        before = float(smooth[(0,) * d])
        smooth = sp.project_coeffs(sp.forward(vals, COS, grid), grid, n)
        shift = float(smooth[(0,) * d]) - before
        vals = sp.inverse(smooth, COS, grid)
    if delta > 0 and float(vals.min()) < lo * (1 - 1e-12):
        raise NumericalFailure("mollified density below delta")
    pos = rho0 > 0
    ratio = np.where(pos, m0 / np.sqrt(np.where(pos, rho0, 1.0)), 0.0)
    h = sp.project_coeffs(sp.forward(ratio, SIN, grid), grid, n)
    h_vals = sp.inverse(h, SIN, grid)
    err = float(np.sqrt(grid.integrate(np.sum((ratio - h_vals) ** 2, axis=0))))
    m_vals = h_vals * np.sqrt(vals)
    info = MollifyInfo(err, shift, float(vals.min()), float(vals.max()))
    return smooth, m_vals, info


@dataclass(frozen=True)
class InitialData:
    """Named initial-data recipe with amplitude knobs."""

    preset: str = "smooth"
    rho_mean: float = 1.0
    rho_amp: float = 0.1
    u_amp: float = 0.2
    c_mean: float = 1.0
    c_amp: float = 0.3
    q_amp: float = 0.3
    theta_amp: float = 0.8
    waves: int = 1

    PRESETS = ("smooth", "rest", "heat", "oscillatory", "degenerate-max", "vacuum")

    def __post_init__(self):
        if self.preset not in self.PRESETS:
            raise ConfigError(f"unknown initial-data preset {self.preset!r}")


def initial_fields(grid: Grid, data: InitialData) -> dict[str, np.ndarray]:
    """Grid values ``rho, u (d,...), c, q (5,...)`` for a preset."""
    d = grid.d
    X = [grid.mesh[a] / grid.lengths[a] for a in range(d)]  # scaled to [0, 1]
    pi = np.pi
    k = data.waves
    shape = grid.shape
    rho = np.full(shape, data.rho_mean)
    u = np.zeros((d,) + shape)
    c = np.full(shape, data.c_mean)
    q = np.zeros((5,) + shape)
    if data.preset == "rest":
        pass
    elif data.preset in ("smooth", "heat", "oscillatory", "vacuum"):
        cosprod = np.ones(shape)
        for a in range(d):
            cosprod = cosprod * np.cos(pi * k * X[a])
        rho = data.rho_mean * (1.0 + data.rho_amp * cosprod)
        c = data.c_mean + data.c_amp * np.cos(pi * X[0]) * (np.cos(pi * X[1]) if d > 1 else 1.0)
        theta = data.theta_amp * np.cos(pi * X[0]) * (np.cos(2 * pi * X[1]) if d > 1 else 1.0)
        nvec = np.stack([np.cos(theta), np.sin(theta), np.zeros(shape)])
        s = data.q_amp
        mat = s * (np.einsum("i...,j...->ij...", nvec, nvec)
                   - np.eye(3).reshape(3, 3, *([1] * d)) / 3.0)
        q = tn.sym_traceless_project(mat)
        if data.preset != "heat":
            if d == 1:
                u[0] = data.u_amp * np.sin(pi * X[0]) * (1 + 0.5 * np.cos(pi * X[0]))
            else:
                # a divergence-carrying and a rotational part
                u[0] = data.u_amp * np.sin(pi * X[0]) * np.sin(pi * X[1]) * (1 + 0.5 * np.cos(pi * X[0]))
                u[1] = -data.u_amp * np.sin(2 * pi * X[0]) * np.sin(pi * X[1])
                if d == 3:
                    for a in range(d):
                        u[a] = u[a] * np.sin(pi * X[2])
        if data.preset == "oscillatory":
            # high-wavenumber, large-amplitude density oscillation
            osc = np.ones(shape)
            for a in range(d):
                osc = osc * np.cos(pi * (4 * k) * X[a])
            rho = data.rho_mean * (1.0 + data.rho_amp * osc)
        if data.preset == "vacuum":
            # density vanishing on a patch; mollification lifts it to delta
            r2 = sum((X[a] - 0.5) ** 2 for a in range(d))
            rho = data.rho_mean * np.clip((np.sqrt(r2) - 0.15) / 0.2, 0.0, 1.0)
    elif data.preset == "degenerate-max":
        # c0 touches its maximum with vanishing second derivative
        th = pi * X[0]
        prof = (4 * np.cos(th) - np.cos(2 * th) - 3.0) / 8.0  # in [-1, 0], max 0 at x=0
        c = data.c_mean + data.c_amp * (1.0 + 2.0 * prof)
    return {"rho": rho, "u": u, "c": c, "q": q}


def build_initial_state(stp: Stepper, data: InitialData, fields_: dict | None = None) -> tuple[State, MollifyInfo]:
    p, g = stp.params, stp.grid
    f = initial_fields(g, data) if fields_ is None else fields_
    m0 = f["rho"] * f["u"]
    rho, m_vals, info = mollify_initial_data(f["rho"], m0, p.delta, p.beta, g, p.n)
    rho_vals = sp.inverse(rho, COS, g)
    mcoef = sp.project_coeffs(sp.forward(m_vals, SIN, g), g, p.n)
    # u solves M[rho] u = P_n m
    saved_dt = stp.dt
    stp._set_dt(1e-300)
    try:
        u, _ = stp.solve_momentum(rho_vals, mcoef)
    finally:
        stp._set_dt(saved_dt)
    u = np.where(stp.mask, u, 0.0)
    m = stp.apply_mass(rho_vals, u)
    c = sp.project_coeffs(sp.forward(f["c"], COS, g), g, p.n)
    q = sp.project_coeffs(sp.forward(f["q"], COS, g), g, p.n)
    return State(rho, u, m, c, q), info


def state_from_values(stp: Stepper, rho, u, c, q) -> State:
    """Project grid values straight onto X_n (no mollification)."""
    g, n = stp.grid, stp.params.n
    rho_c = sp.project_coeffs(sp.forward(rho, COS, g), g, n)
    u_c = sp.project_coeffs(sp.forward(u, SIN, g), g, n)
    m = stp.apply_mass(sp.inverse(rho_c, COS, g), u_c)
    return State(rho_c, u_c, m,
                 sp.project_coeffs(sp.forward(c, COS, g), g, n),
                 sp.project_coeffs(sp.forward(q, COS, g), g, n))


# ---------------------------------------------------------------- run loop

Observer = Callable[[StepInfo], None]


@dataclass
class RunResult:
    state: State
    reports: list[StepReport]
    halted: bool
    tau_K: float | None
    steps: int


def simulate(stp: Stepper, state: State, path: nz.WienerPath | None, n_steps: int,
             observers: Iterable = (), keep_reports: bool = True) -> RunResult:
    """March ``n_steps``; stops early (inclusive) once the stopping rule fires."""
    observers = list(observers)
    tracker = RunTracker()
    tracker.start(stp, state)
    gf = stp.grid_fields(state)
    for ob in observers:
        if hasattr(ob, "start"):
            ob.start(stp, state, gf)
    reports: list[StepReport] = []
    halted = check_stopping(tracker, stp.params.K)
    tau = state.t if halted else None
    st = state
    for _ in range(n_steps):
        if halted:
            break
        dW = path.sample_increment(st.step) if (path is not None and stp.noise.n_modes) else None
        st, info = stp.step(st, dW, gf, tracker)
        gf = info.gf_after
        for ob in observers:
            ob(info)
        if keep_reports:
            reports.append(info.report)
        if info.report.halted:
            halted = True
            tau = st.t
    for ob in observers:
        if hasattr(ob, "finish"):
            ob.finish(stp, st, gf)
    return RunResult(st, reports, halted, tau, st.step - state.step)
