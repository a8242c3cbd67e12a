"""Truncated cylindrical Wiener noise and the multiplicative coefficient.

The default coefficient is

    f e_k = lam_k psi_k(x) * g(x),
    g = a_rho rho^((gam-1)/2) v0 + a_u u + a_c |c|^((gam-1)/gam) v0
        + a_Q |grad Q|^((gam-1)/gam) v0,

so every mode shares the vector ``g`` and differs only by the scalar
``lam_k psi_k``. Sums over modes then collapse to one scalar field
``eta = sum_k lam_k psi_k dW_k``.

Wiener increments come from a counter-based Philox stream keyed by the
seed; the counter encodes the fine step index, so any increment is a pure
function of ``(seed, step, mode)`` and coarser time steps reuse the same
Brownian path by summing fine increments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .spectral import COS, SIN, Grid


class VacuumError(FloatingPointError):
    """Raised when a density value at or below zero reaches the noise map."""


def _cosine_shapes(d: int, count: int) -> list[tuple[int, ...]]:
    """First ``count`` cosine multi-indices ordered by |k|^2 then lexicographically."""
    top = int(np.ceil(count ** (1.0 / d))) + 2
    idx = np.stack(np.meshgrid(*[np.arange(top)] * d, indexing="ij"), -1).reshape(-1, d)
    order = sorted(map(tuple, idx), key=lambda k: (sum(v * v for v in k), k))
    return order[:count]


@dataclass(frozen=True)
class NoiseModel:
    n_modes: int = 16
    s: float = 1.1
    a_rho: float = 0.1
    a_u: float = 0.1
    a_c: float = 0.1
    a_Q: float = 0.1
    v0: tuple[float, float, float] = (1.0, 0.0, 0.0)
    gamma: float = 5.0 / 3.0
    shapes: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.n_modes < 0:
            raise ValueError("n_modes must be >= 0")
        v = np.asarray(self.v0, dtype=float)
        if v.shape != (3,) or not np.isclose(np.linalg.norm(v), 1.0):
            raise ValueError("v0 must be a unit 3-vector")

    @property
    def lam(self) -> np.ndarray:
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return k ** (-self.s)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([self.a_rho, self.a_u, self.a_c, self.a_Q])

    @property
    def is_off(self) -> bool:
        return self.n_modes == 0 or not np.any(self.amplitudes)

    def lam_sq_sum(self) -> float:
        return float(np.sum(self.lam ** 2))

    def growth_constant(self) -> float:
        """Explicit C in ``sum_k |f e_k|^2 <= C (rho^(gam-1) + (|c|+|gradQ|)^p + |u|^2)``.

        ``p = 2(gam-1)/gam``. All four terms of ``g`` may be parallel, and
        ``(|c|^(p/2) + |gradQ|^(p/2))^2 <= 2^(2-p) (|c|+|gradQ|)^p``; weighted
        Cauchy-Schwarz then gives the sharp factor ``2 + 2^(2-p)``.
        """
        p = 2.0 * (self.gamma - 1.0) / self.gamma
        amax = float(np.max(np.abs(self.amplitudes)))
        return self.lam_sq_sum() * amax ** 2 * (2.0 + 2.0 ** (2.0 - p))

    def mode_shapes(self, d: int) -> tuple[tuple[int, ...], ...]:
        if self.shapes is not None:
            return self.shapes
        return tuple(_cosine_shapes(d, self.n_modes))

    def shape_values(self, grid: Grid) -> np.ndarray:
        """``psi_k`` on the grid, shape ``(n_modes, *grid.shape)``; sup norm 1."""
        out = np.ones((self.n_modes,) + grid.shape)
        for i, k in enumerate(self.mode_shapes(grid.d)):
            for a, ka in enumerate(k):
                x = grid.mesh[a]
                out[i] = out[i] * np.cos(ka * np.pi * x / grid.lengths[a])
        return out


@dataclass
class WienerPath:
    """Brownian increments for one Monte-Carlo path.

    ``refine`` fine increments of length ``dt / refine`` are summed into one
    step, so runs with different ``dt`` but equal ``dt / refine`` see the
    same Brownian path.
    """

    seed: int
    dt: float
    n_modes: int
    refine: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.refine < 1:
            raise ValueError("refine must be >= 1")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    def fine_increments(self, fine_step: int) -> np.ndarray:
        bg = np.random.Philox(key=np.array([self.seed, 0x5EED], dtype=np.uint64),
                              counter=np.array([fine_step, 0, 0, 0], dtype=np.uint64))
        z = np.random.Generator(bg).standard_normal(self.n_modes)
        return z * np.sqrt(self.dt / self.refine)

    def sample_increment(self, step: int) -> np.ndarray:
        if self.n_modes == 0:
            return np.zeros(0)
        total = np.zeros(self.n_modes)
        for j in range(self.refine):
            total += self.fine_increments(step * self.refine + j)
        return total


def sample_increment(path: WienerPath, step: int) -> np.ndarray:
    return path.sample_increment(step)


# ------------------------------------------------------------- coefficient

def _check_rho(rho):
    if np.any(~(np.asarray(rho) > 0)):
        raise VacuumError("non-positive density in noise coefficient")


def common_vector(rho, u, c, grad_q_norm, model: NoiseModel) -> np.ndarray:
    """The mode-independent vector ``g``, shape ``(3, *pts)``."""
    rho = np.asarray(rho, dtype=float)
    _check_rho(rho)
    u = np.asarray(u, dtype=float)
    gam = model.gamma
    v0 = np.asarray(model.v0, dtype=float).reshape((3,) + (1,) * rho.ndim)
    scal = (model.a_rho * rho ** (0.5 * (gam - 1.0))
            + model.a_c * np.abs(c) ** ((gam - 1.0) / gam)
            + model.a_Q * np.abs(grad_q_norm) ** ((gam - 1.0) / gam))
    g = v0 * scal
    du = u.shape[0]
    g[:du] = g[:du] + model.a_u * u
    return g


def noise_coefficient(rho, u, c, grad_q_norm, k: int, model: NoiseModel, psi_value) -> np.ndarray:
    """``f e_k`` at one or more points; ``k`` is 1-based, ``psi_value`` = psi_k there."""
    if not 1 <= k <= model.n_modes:
        raise ValueError("mode index out of range")
    lam = model.lam[k - 1]
    return lam * np.asarray(psi_value) * common_vector(rho, u, c, grad_q_norm, model)


def growth_sides(rho, u, c, grad_q_norm, model: NoiseModel, psi=None):
    """Both sides of the growth condition at each point.

    Returns ``(sum_k |f e_k|^2, C * (rho^(gam-1) + |u|^2 + (|c| + |gradQ|)^p))``.
    """
    gam = model.gamma
    g = common_vector(rho, u, c, grad_q_norm, model)
    if psi is None:
        w = model.lam_sq_sum()
    else:
        w = np.einsum("k,k...->...", model.lam ** 2, np.asarray(psi) ** 2)
    lhs = w * np.sum(g * g, axis=0)
    p = 2.0 * (gam - 1.0) / gam
    uu = np.sum(np.asarray(u, dtype=float) ** 2, axis=0)
    rhs = model.growth_constant() * (np.asarray(rho) ** (gam - 1.0) + uu
                                     + (np.abs(c) + np.abs(grad_q_norm)) ** p)
    return lhs, rhs


# ------------------------------------------------------------- forcing

def eta_field(model: NoiseModel, psi: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """``sum_k lam_k psi_k dW_k`` on the grid."""
    if model.n_modes == 0:
        return np.zeros(psi.shape[1:])
    return np.tensordot(model.lam * dW, psi, axes=(0, 0))


def _weighted_projection(weight, u, c, grad_q_norm, eta, model: NoiseModel, grid: Grid,
                         n: int) -> np.ndarray:
    """Sine coefficients (modes <= n) of ``weight * eta * g``.

    ``g`` splits into a cosine-parity scalar times ``v0`` and the sine-parity
    ``a_u u``; each part is re-expanded exactly in the sine basis.
    """
    d = grid.d
    SS = (SIN,) * d
    CC = (sp.COS,) * d
    gam = model.gamma
    scal = (model.a_rho * np.asarray(weight["rho"]) ** (0.5 * (gam - 1.0))
            + model.a_c * np.abs(c) ** ((gam - 1.0) / gam)
            + model.a_Q * np.abs(grad_q_norm) ** ((gam - 1.0) / gam))
    w = weight["w"] * eta
    out = np.zeros((d,) + grid.shape)
    v0 = np.asarray(model.v0, dtype=float)
    if np.any(v0[:d] != 0.0):
        base = sp.project_values(w * scal, CC, SS, grid, n)
        for i in range(d):
            if v0[i] != 0.0:
                out[i] += v0[i] * base
    if model.a_u != 0.0:
        out += model.a_u * sp.project_values(w * np.asarray(u)[:d], SS, SS, grid, n)
    return out


def stochastic_forcing(rho, u, c, grad_q_norm, dW, model: NoiseModel, grid: Grid, n: int,
                       psi: np.ndarray | None = None) -> np.ndarray:
    """Galerkin noise increment ``sum_k sqrt(rho) P_n(sqrt(rho) f e_k) dW_k`` in X_n.

    The Galerkin forcing tested against ``phi in X_n`` is
    ``int sqrt(rho) P_n(sqrt(rho) f e_k) . phi``, i.e. the X_n coefficient
    vector of ``sqrt(rho) P_n(sqrt(rho) f e_k)``. Linearity in ``k`` lets
    the whole sum go through a single pair of projections. Inputs are grid
    values (``rho, c`` cosine parity, ``u`` sine parity); the result is a
    sine-coefficient array ``(d, *grid.shape)``.
    """
    d = grid.d
    if psi is None:
        psi = model.shape_values(grid)
    rho = np.asarray(rho, dtype=float)
    _check_rho(rho)
    eta = eta_field(model, psi, np.asarray(dW, dtype=float))
    sr = np.sqrt(rho)
    inner = _weighted_projection({"rho": rho, "w": sr}, u, c, grad_q_norm, eta, model, grid, n)
    outer = sr * sp.inverse(inner, (SIN,) * d, grid)
    return sp.project_values(outer, (SIN,) * d, (SIN,) * d, grid, n)


def limit_forcing(rho, u, c, grad_q_norm, dW, model: NoiseModel, grid: Grid, n: int,
                  psi: np.ndarray | None = None) -> np.ndarray:
    """The limit-equation pairing ``P_n(rho f dW)`` for the gap diagnostic."""
    if psi is None:
        psi = model.shape_values(grid)
    rho = np.asarray(rho, dtype=float)
    _check_rho(rho)
    eta = eta_field(model, psi, np.asarray(dW, dtype=float))
    return _weighted_projection({"rho": rho, "w": rho}, u, c, grad_q_norm, eta, model, grid, n)


def hs_norm(rho, u, c, grad_q_norm, model: NoiseModel, grid: Grid,
            psi: np.ndarray | None = None) -> float:
    """``(sum_k ||sqrt(rho) f e_k||^2_{L^2})^(1/2)`` by grid quadrature."""
    if psi is None:
        psi = model.shape_values(grid)
    if model.n_modes == 0:
        return 0.0
    g = common_vector(rho, u, c, grad_q_norm, model)
    w = np.einsum("k,k...->...", model.lam ** 2, psi ** 2)
    return float(np.sqrt(grid.integrate(np.asarray(rho) * w * np.sum(g * g, axis=0))))


def auxiliary_norm(alpha) -> float:
    """``sqrt(sum_k alpha_k^2 k^-2)`` with 1-based k."""
    a = np.asarray(alpha, dtype=float).ravel()
    k = np.arange(1, a.size + 1, dtype=float)
    return float(np.sqrt(np.sum(a * a / (k * k))))


@dataclass
class ContinuityReport:
    worst_ratio: float
    lipschitz_ratio: float
    constant: float
    passed: bool
    lhs_max: float = 0.0
    rhs_at_worst: float = 0.0


def continuity_check(s1: dict, s2: dict, model: NoiseModel, constant: float | None = None,
                     psi=None) -> ContinuityReport:
    """Hoelder-type continuity of ``rho f``, evaluated pointwise on the grid.

    ``s1``/``s2`` hold grid arrays ``rho``, ``u`` (d, ...), ``c``, ``q``
    (5, ...) and ``grad_q_norm``. Left side is
    ``sum_k |rho1 f1 e_k - rho2 f2 e_k|^2``; right side is
    ``|(drho, dm, dc, dQ)|^((gam+1)/(2 gam))``. The momentum difference is
    ``rho1 u1 - rho2 u2``.
    """
    gam = model.gamma
    g1 = common_vector(s1["rho"], s1["u"], s1["c"], s1["grad_q_norm"], model)
    g2 = common_vector(s2["rho"], s2["u"], s2["c"], s2["grad_q_norm"], model)
    if psi is None:
        w = model.lam_sq_sum()
    else:
        w = np.einsum("k,k...->...", model.lam ** 2, np.asarray(psi) ** 2)
    diff = np.asarray(s1["rho"]) * g1 - np.asarray(s2["rho"]) * g2
    lhs = w * np.sum(diff * diff, axis=0)
    dm = np.asarray(s1["rho"]) * np.asarray(s1["u"]) - np.asarray(s2["rho"]) * np.asarray(s2["u"])
    dq = np.asarray(s1["q"]) - np.asarray(s2["q"])
    from .tensor import norm2
    dist = np.sqrt((np.asarray(s1["rho"]) - s2["rho"]) ** 2 + np.sum(dm * dm, axis=0)
                   + (np.asarray(s1["c"]) - s2["c"]) ** 2 + norm2(dq))
    rhs = dist ** ((gam + 1.0) / (2.0 * gam))
    mask = dist > 0
    if not np.any(mask):
        return ContinuityReport(0.0, 0.0, constant or 0.0, True, float(lhs.max(initial=0.0)), 0.0)
    ratio = np.where(mask, lhs / np.where(mask, rhs, 1.0), 0.0)
    lip = np.where(mask, lhs / np.where(mask, dist * dist, 1.0), 0.0)
    i = int(np.argmax(ratio))
    worst = float(ratio.ravel()[i])
    if constant is None:
        constant = np.inf
    return ContinuityReport(worst, float(lip.max()), float(constant), bool(worst <= constant),
                            float(lhs.max()), float(rhs.ravel()[i]))
