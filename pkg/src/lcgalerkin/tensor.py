"""Pointwise Q-tensor algebra.

A Q-tensor is stored as its five independent entries
``(q11, q12, q13, q22, q23)`` along the *leading* axis, so an array of
shape ``(5, *pts)`` holds one tensor per point. The full matrix is a
derived view with ``q33 = -q11 - q22``; symmetry and zero trace therefore
hold by construction. General 3x3 matrices (velocity gradients, stresses)
use shape ``(3, 3, *pts)``.

Hot loops come in two flavours: a numba kernel working on flattened
points and a vectorised numpy twin. ``lcgalerkin._backend`` decides which
one the public names point at.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import njit, pick

# (row, col) of each stored component
COMPONENTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2))
# weight of each stored entry in the Frobenius product, q33 handled apart
_OFFDIAG = np.array([0.0, 2.0, 2.0, 0.0, 2.0])


@dataclass(frozen=True)
class LCParams:
    """Constants entering the molecular field and stresses."""

    Gamma: float = 1.0
    c_star: float = 1.0
    b: float = 1.0
    sigma_star: float = 1.0


# ---------------------------------------------------------------- conversions

def to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    m = np.empty((3, 3) + q.shape[1:])
    m[0, 0] = q[0]
    m[0, 1] = m[1, 0] = q[1]
    m[0, 2] = m[2, 0] = q[2]
    m[1, 1] = q[3]
    m[1, 2] = m[2, 1] = q[4]
    m[2, 2] = -q[0] - q[3]
    return m


def sym_traceless_project(m: np.ndarray) -> np.ndarray:
    """Return ``(M + M^T)/2 - tr(M)/3 I`` in 5-component form."""
    m = np.asarray(m, dtype=float)
    tr3 = (m[0, 0] + m[1, 1] + m[2, 2]) / 3.0
    q = np.empty((5,) + m.shape[2:])
    q[0] = m[0, 0] - tr3
    q[1] = 0.5 * (m[0, 1] + m[1, 0])
    q[2] = 0.5 * (m[0, 2] + m[2, 0])
    q[3] = m[1, 1] - tr3
    q[4] = 0.5 * (m[1, 2] + m[2, 1])
    return q


def random_q(rng: np.random.Generator, shape=(), scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((5,) + tuple(shape))


# ------------------------------------------------------------- basic algebra

def frob(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Frobenius product ``Q:P = tr(QP)`` of two symmetric traceless tensors."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    return (q[0] * p[0] + q[3] * p[3] + (q[0] + q[3]) * (p[0] + p[3])
            + 2.0 * (q[1] * p[1] + q[2] * p[2] + q[4] * p[4]))


def norm2(q: np.ndarray) -> np.ndarray:
    """``|Q|^2 = tr(Q^2)``."""
    return frob(q, q)


def matmul3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,jk...->ik...", a, b)


def vorticity_tensor(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return 0.5 * (g - np.swapaxes(g, 0, 1))


def q_squared_traceless(q: np.ndarray) -> np.ndarray:
    """``Q^2 - tr(Q^2)/3 I`` in 5-component form."""
    m = to_matrix(q)
    return sym_traceless_project(matmul3(m, m))


def molecular_field(q, lap_q, c, params: LCParams) -> np.ndarray:
    """H = lap Q - (c - c*)/2 Q + b (Q^2 - tr(Q^2)/3 I) - c* Q tr(Q^2)."""
    q = np.asarray(q, dtype=float)
    lap_q = np.asarray(lap_q, dtype=float)
    c = np.asarray(c, dtype=float)
    cs = params.c_star
    return (lap_q - 0.5 * (c - cs) * q + params.b * q_squared_traceless(q)
            - cs * q * norm2(q))


def free_energy_density(q, grad_q, params: LCParams) -> np.ndarray:
    """F = 1/2 |grad Q|^2 + 1/2 tr(Q^2) + c*/4 tr(Q^2)^2.

    ``grad_q`` has shape ``(d, 5, *pts)``. The name follows the model even
    though the gradient part makes F depend on (Q, grad Q) jointly.
    """
    grad_q = np.asarray(grad_q, dtype=float)
    q2 = norm2(q)
    g2 = sum(norm2(grad_q[a]) for a in range(grad_q.shape[0]))
    return 0.5 * g2 + 0.5 * q2 + 0.25 * params.c_star * q2 * q2


def ericksen_stress(grad_q) -> np.ndarray:
    """``(grad Q (.) grad Q)_ab = d_a Q : d_b Q``, zero outside the d x d block."""
    grad_q = np.asarray(grad_q, dtype=float)
    d = grad_q.shape[0]
    out = np.zeros((3, 3) + grad_q.shape[2:])
    for a in range(d):
        for b in range(a, d):
            v = frob(grad_q[a], grad_q[b])
            out[a, b] = v
            out[b, a] = v
    return out


def commutator_stress(q, b) -> np.ndarray:
    """``QB - BQ`` (skew for symmetric Q, B)."""
    mq = to_matrix(q)
    mb = to_matrix(b)
    return matmul3(mq, mb) - matmul3(mb, mq)


def rotation_term(psi, q) -> np.ndarray:
    """``Psi Q - Q Psi`` as a full matrix (symmetric when Psi is skew)."""
    mq = to_matrix(q)
    return matmul3(psi, mq) - matmul3(mq, psi)


def active_stress(c, q, sigma_star: float) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return sigma_star * c * c * to_matrix(q)


# ------------------------------------------------------------- hot kernels
# q-equation local terms: (Psi Q - Q Psi) + Gamma * (H - lap Q)
# returned in 5-component form together with the largest departure of the
# assembled matrix from S0^3 (asymmetry or trace), which must stay ~1e-16.

def _q_local_rhs_numpy(q, gu, c, Gamma, c_star, b):
    psi = 0.5 * (gu - np.swapaxes(gu, 0, 1))
    mq = to_matrix(q)
    q2 = matmul3(mq, mq)
    tq2 = q2[0, 0] + q2[1, 1] + q2[2, 2]
    eye = np.eye(3).reshape(3, 3, *([1] * (q.ndim - 1)))
    m = (matmul3(psi, mq) - matmul3(mq, psi)
         + Gamma * (-0.5 * (c - c_star) * mq + b * (q2 - tq2 / 3.0 * eye)
                    - c_star * mq * tq2))
    asym = np.abs(m - np.swapaxes(m, 0, 1)).max(initial=0.0)
    trace = np.abs(m[0, 0] + m[1, 1] + m[2, 2]).max(initial=0.0)
    return sym_traceless_project(m), max(asym, trace)


@njit
def _q_local_rhs_numba(q, gu, c, Gamma, c_star, b):
    npts = q.shape[1]
    out = np.empty((5, npts))
    resid = 0.0
    mq = np.empty((3, 3))
    ps = np.empty((3, 3))
    q2 = np.empty((3, 3))
    m = np.empty((3, 3))
    for p in range(npts):
        mq[0, 0] = q[0, p]
        mq[0, 1] = q[1, p]
        mq[0, 2] = q[2, p]
        mq[1, 1] = q[3, p]
        mq[1, 2] = q[4, p]
        mq[2, 2] = -q[0, p] - q[3, p]
        mq[1, 0] = mq[0, 1]
        mq[2, 0] = mq[0, 2]
        mq[2, 1] = mq[1, 2]
        for i in range(3):
            for j in range(3):
                ps[i, j] = 0.5 * (gu[i, j, p] - gu[j, i, p])
        tq2 = 0.0
        for i in range(3):
            for j in range(3):
                s = 0.0
                for k in range(3):
                    s += mq[i, k] * mq[k, j]
                q2[i, j] = s
            tq2 += q2[i, i]
        lin = -0.5 * (c[p] - c_star) - c_star * tq2
        for i in range(3):
            for j in range(3):
                r = 0.0
                for k in range(3):
                    r += ps[i, k] * mq[k, j] - mq[i, k] * ps[k, j]
                v = q2[i, j]
                if i == j:
                    v -= tq2 / 3.0
                m[i, j] = r + Gamma * (lin * mq[i, j] + b * v)
        for i in range(3):
            for j in range(i + 1, 3):
                a = abs(m[i, j] - m[j, i])
                if a > resid:
                    resid = a
        tr = abs(m[0, 0] + m[1, 1] + m[2, 2])
        if tr > resid:
            resid = tr
        t3 = (m[0, 0] + m[1, 1] + m[2, 2]) / 3.0
        out[0, p] = m[0, 0] - t3
        out[1, p] = 0.5 * (m[0, 1] + m[1, 0])
        out[2, p] = 0.5 * (m[0, 2] + m[2, 0])
        out[3, p] = m[1, 1] - t3
        out[4, p] = 0.5 * (m[1, 2] + m[2, 1])
    return out, resid


def _stress_numpy(q, lap_q, grad_q, c, c_star, sigma_star):
    """Total Q/active stress ``F I - gradQ(.)gradQ + (Q lapQ - lapQ Q) + s* c^2 Q``.

    Only the leading ``d x d`` block is returned, shape ``(d, d, npts)``.
    """
    d = grad_q.shape[0]
    mq = to_matrix(q)
    ml = to_matrix(lap_q)
    comm = matmul3(mq, ml) - matmul3(ml, mq)
    q2 = norm2(q)
    g2 = np.zeros_like(q2)
    for a in range(d):
        g2 += norm2(grad_q[a])
    fe = 0.5 * g2 + 0.5 * q2 + 0.25 * c_star * q2 * q2
    out = np.empty((d, d) + q.shape[1:])
    for i in range(d):
        for j in range(d):
            v = comm[i, j] + sigma_star * c * c * mq[i, j] - frob(grad_q[i], grad_q[j])
            if i == j:
                v = v + fe
            out[i, j] = v
    return out


@njit
def _stress_numba(q, lap_q, grad_q, c, c_star, sigma_star):
    d = grad_q.shape[0]
    npts = q.shape[1]
    out = np.empty((d, d, npts))
    mq = np.empty((3, 3))
    ml = np.empty((3, 3))
    w = np.array([1.0, 2.0, 2.0, 1.0, 2.0])
    for p in range(npts):
        mq[0, 0] = q[0, p]
        mq[0, 1] = q[1, p]
        mq[0, 2] = q[2, p]
        mq[1, 1] = q[3, p]
        mq[1, 2] = q[4, p]
        mq[2, 2] = -q[0, p] - q[3, p]
        mq[1, 0] = mq[0, 1]
        mq[2, 0] = mq[0, 2]
        mq[2, 1] = mq[1, 2]
        ml[0, 0] = lap_q[0, p]
        ml[0, 1] = lap_q[1, p]
        ml[0, 2] = lap_q[2, p]
        ml[1, 1] = lap_q[3, p]
        ml[1, 2] = lap_q[4, p]
        ml[2, 2] = -lap_q[0, p] - lap_q[3, p]
        ml[1, 0] = ml[0, 1]
        ml[2, 0] = ml[0, 2]
        ml[2, 1] = ml[1, 2]
        q2 = 0.0
        for i in range(3):
            for j in range(3):
                q2 += mq[i, j] * mq[i, j]
        g2 = 0.0
        for a in range(d):
            g33 = grad_q[a, 0, p] + grad_q[a, 3, p]
            s = g33 * g33
            for k in range(5):
                s += w[k] * grad_q[a, k, p] * grad_q[a, k, p]
            g2 += s
        fe = 0.5 * g2 + 0.5 * q2 + 0.25 * c_star * q2 * q2
        act = sigma_star * c[p] * c[p]
        for i in range(d):
            for j in range(d):
                comm = 0.0
                for k in range(3):
                    comm += mq[i, k] * ml[k, j] - ml[i, k] * mq[k, j]
                e = ((grad_q[i, 0, p] + grad_q[i, 3, p]) * (grad_q[j, 0, p] + grad_q[j, 3, p]))
                for k in range(5):
                    e += w[k] * grad_q[i, k, p] * grad_q[j, k, p]
                v = comm + act * mq[i, j] - e
                if i == j:
                    v += fe
                out[i, j, p] = v
    return out


def _cancellation_numpy(q, b, g):
    """Both sides of tr((QB-BQ)G) = tr((Psi Q - Q Psi)B) and tr((Psi Q-Q Psi)Q^k)."""
    mq = to_matrix(q)
    mb = to_matrix(b)
    psi = 0.5 * (g - np.swapaxes(g, 0, 1))
    lhs = np.einsum("ij...,ji...->...", matmul3(mq, mb) - matmul3(mb, mq), g)
    rot = matmul3(psi, mq) - matmul3(mq, psi)
    rhs = np.einsum("ij...,ji...->...", rot, mb)
    scale = (np.sqrt(np.einsum("ij...,ij...->...", mq, mq) * np.einsum("ij...,ij...->...", mb, mb))
             * np.sqrt(np.einsum("ij...,ij...->...", g, g)))
    pk = mq
    traces = []
    for _ in range(3):
        traces.append(np.einsum("ij...,ji...->...", rot, pk))
        pk = matmul3(pk, mq)
    return lhs, rhs, scale, np.stack(traces)


@njit
def _cancellation_numba(q, b, g):
    npts = q.shape[1]
    lhs = np.empty(npts)
    rhs = np.empty(npts)
    scale = np.empty(npts)
    traces = np.empty((3, npts))
    mq = np.empty((3, 3))
    mb = np.empty((3, 3))
    ps = np.empty((3, 3))
    rot = np.empty((3, 3))
    cm = np.empty((3, 3))
    pk = np.empty((3, 3))
    tmp = np.empty((3, 3))
    for p in range(npts):
        for src, dst in ((q, mq), (b, mb)):
            dst[0, 0] = src[0, p]
            dst[0, 1] = src[1, p]
            dst[0, 2] = src[2, p]
            dst[1, 1] = src[3, p]
            dst[1, 2] = src[4, p]
            dst[2, 2] = -src[0, p] - src[3, p]
            dst[1, 0] = dst[0, 1]
            dst[2, 0] = dst[0, 2]
            dst[2, 1] = dst[1, 2]
        nq = 0.0
        nb = 0.0
        ng = 0.0
        for i in range(3):
            for j in range(3):
                ps[i, j] = 0.5 * (g[i, j, p] - g[j, i, p])
                nq += mq[i, j] * mq[i, j]
                nb += mb[i, j] * mb[i, j]
                ng += g[i, j, p] * g[i, j, p]
        for i in range(3):
            for j in range(3):
                s1 = 0.0
                s2 = 0.0
                for k in range(3):
                    s1 += mq[i, k] * mb[k, j] - mb[i, k] * mq[k, j]
                    s2 += ps[i, k] * mq[k, j] - mq[i, k] * ps[k, j]
                cm[i, j] = s1
                rot[i, j] = s2
        l = 0.0
        r = 0.0
        for i in range(3):
            for j in range(3):
                l += cm[i, j] * g[j, i, p]
                r += rot[i, j] * mb[j, i]
        lhs[p] = l
        rhs[p] = r
        scale[p] = np.sqrt(nq * nb * ng)
        for i in range(3):
            for j in range(3):
                pk[i, j] = mq[i, j]
        for kk in range(3):
            t = 0.0
            for i in range(3):
                for j in range(3):
                    t += rot[i, j] * pk[j, i]
            traces[kk, p] = t
            for i in range(3):
                for j in range(3):
                    s = 0.0
                    for k in range(3):
                        s += pk[i, k] * mq[k, j]
                    tmp[i, j] = s
            for i in range(3):
                for j in range(3):
                    pk[i, j] = tmp[i, j]
    return lhs, rhs, scale, traces


q_local_rhs = pick(_q_local_rhs_numba, _q_local_rhs_numpy)
stress_kernel = pick(_stress_numba, _stress_numpy)
cancellation_kernel = pick(_cancellation_numba, _cancellation_numpy)


def cancellation_residuals(q, b, g):
    """Evaluate the commutator cancellation and trace-annihilation identities.

    ``q``, ``b``: ``(5, npts)``; ``g``: ``(3, 3, npts)``. Returns
    ``(relative_gap, traces)`` with ``traces`` of shape ``(3, npts)`` for
    ``k = 1, 2, 3``.
    """
    q = np.ascontiguousarray(q, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    lhs, rhs, scale, traces = cancellation_kernel(q, b, g)
    gap = np.abs(lhs - rhs) / np.maximum(scale, np.finfo(float).tiny)
    return gap, traces
