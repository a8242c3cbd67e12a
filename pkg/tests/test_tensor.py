import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lcgalerkin import tensor as tn

P = tn.LCParams(Gamma=1.0, c_star=1.0, b=1.0, sigma_star=1.0)
finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False).filter(
    lambda x: x == 0 or abs(x) > 1e-100)


def q_of(m):
    return tn.sym_traceless_project(np.asarray(m, dtype=float))


def test_identity_projects_to_zero():
    assert np.allclose(q_of(np.eye(3)), 0.0, atol=1e-16)


@given(arrays(float, 5, elements=finite))
def test_projection_fixes_s0(q):
    assert np.allclose(q_of(tn.to_matrix(q)), q, atol=1e-13)


def test_projection_of_e1_e2():
    m = np.zeros((3, 3))
    m[0, 1] = 1.0
    np.testing.assert_array_equal(q_of(m), [0.0, 0.5, 0.0, 0.0, 0.0])


@given(arrays(float, (3, 3), elements=finite))
def test_projection_idempotent(m):
    q = q_of(m)
    assert np.allclose(q_of(tn.to_matrix(q)), q, atol=1e-12)


def test_reconstructed_matrix_symmetric_traceless():
    q = tn.random_q(np.random.default_rng(1), (50,))
    m = tn.to_matrix(q)
    np.testing.assert_array_equal(m, np.swapaxes(m, 0, 1))
    assert np.abs(m[0, 0] + m[1, 1] + m[2, 2]).max() == 0.0


def test_vorticity_examples():
    assert np.all(tn.vorticity_tensor(np.eye(3)) == 0)
    g = np.zeros((3, 3))
    g[0, 1] = 1.0
    psi = tn.vorticity_tensor(g)
    assert psi[0, 1] == 0.5 and psi[1, 0] == -0.5
    g = np.random.default_rng(2).normal(size=(3, 3, 20))
    psi = tn.vorticity_tensor(g)
    assert np.all(psi + np.swapaxes(psi, 0, 1) == 0)


def test_molecular_field_examples():
    lap = np.array([0.3, -0.2, 0.1, 0.5, 0.7])
    np.testing.assert_allclose(tn.molecular_field(np.zeros(5), lap, 2.0, P), lap)
    q = q_of(np.diag([1.0, 1.0, -2.0]))
    h = tn.molecular_field(q, np.zeros(5), P.c_star, P)
    np.testing.assert_allclose(tn.to_matrix(h), np.diag([-7.0, -7.0, 14.0]), atol=1e-13)


def test_molecular_field_traceless_matrix_path():
    rng = np.random.default_rng(3)
    q, lap = tn.random_q(rng, (100,)), tn.random_q(rng, (100,))
    c = rng.uniform(0, 2, 100)
    h = tn.molecular_field(q, lap, c, P)
    # full-matrix assembly of the same formula
    mq = tn.to_matrix(q)
    q2 = tn.matmul3(mq, mq)
    tq2 = np.trace(q2)
    ref = (tn.to_matrix(lap) - 0.5 * (c - 1.0) * mq + (q2 - tq2 / 3 * np.eye(3)[..., None])
           - mq * tq2)
    np.testing.assert_allclose(tn.to_matrix(h), ref, atol=1e-12)
    assert np.abs(np.trace(ref)).max() < 1e-12


def test_free_energy_examples():
    assert tn.free_energy_density(np.zeros(5), np.zeros((2, 5)), P) == 0.0
    q = q_of(np.diag([1.0, 1.0, -2.0]))
    assert tn.free_energy_density(q, np.zeros((2, 5)), P) == pytest.approx(12.0)
    q0 = np.array([0.1, 0.2, -0.3, 0.4, 0.05])
    g = np.zeros((3, 5))
    g[0] = q0
    f = tn.free_energy_density(np.zeros(5), g, P)
    assert f == pytest.approx(0.5 * tn.norm2(q0))


def test_ericksen_examples():
    assert np.all(tn.ericksen_stress(np.zeros((3, 5))) == 0)
    q0 = np.array([0.1, 0.2, -0.3, 0.4, 0.05])
    g = np.zeros((3, 5))
    g[0] = q0
    e = tn.ericksen_stress(g)
    assert e[0, 0] == pytest.approx(tn.norm2(q0))
    e[0, 0] = 0
    assert np.all(e == 0)


def test_ericksen_is_gram_matrix():
    rng = np.random.default_rng(4)
    for d in (1, 2, 3):
        g = rng.normal(size=(d, 5))
        flat = np.stack([tn.to_matrix(g[a]).ravel() for a in range(d)])
        e = tn.ericksen_stress(g)
        np.testing.assert_allclose(e[:d, :d], flat @ flat.T, atol=1e-12)
        assert np.all(np.diag(e) >= 0)


def test_commutator_examples():
    a = q_of(np.diag([1.0, 2.0, -3.0]))
    b = q_of(np.diag([0.5, -1.0, 0.5]))
    assert np.allclose(tn.commutator_stress(a, b), 0)
    q = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    b = q_of(np.diag([1.0, -1.0, 0.0]))
    np.testing.assert_allclose(tn.commutator_stress(q, b),
                               [[0, -2, 0], [2, 0, 0], [0, 0, 0]], atol=1e-15)
    rng = np.random.default_rng(5)
    m = tn.commutator_stress(tn.random_q(rng, (50,)), tn.random_q(rng, (50,)))
    assert np.abs(m + np.swapaxes(m, 0, 1)).max() < 1e-14


def test_active_stress_examples():
    q0 = np.array([0.1, 0.2, -0.3, 0.4, 0.05])
    assert np.all(tn.active_stress(0.0, q0, 1.0) == 0)
    np.testing.assert_allclose(tn.active_stress(2.0, q0, 1.0), 4 * tn.to_matrix(q0))
    np.testing.assert_array_equal(tn.active_stress(-2.0, q0, 1.0), tn.active_stress(2.0, q0, 1.0))


def test_rotation_term_symmetric():
    rng = np.random.default_rng(6)
    psi = tn.vorticity_tensor(rng.normal(size=(3, 3, 40)))
    m = tn.rotation_term(psi, tn.random_q(rng, (40,)))
    assert np.abs(m - np.swapaxes(m, 0, 1)).max() < 1e-14


def test_cancellation_identities_sampled():
    # unit Frobenius norm keeps the trace identity on an absolute scale
    rng = np.random.default_rng(7)
    q, b = tn.random_q(rng, (20000,)), tn.random_q(rng, (20000,))
    q /= np.sqrt(tn.norm2(q))
    b /= np.sqrt(tn.norm2(b))
    g = rng.normal(size=(3, 3, 20000))
    g /= np.sqrt((g * g).sum(axis=(0, 1)))
    gap, traces = tn.cancellation_residuals(q, b, g)
    assert gap.max() <= 1e-12
    assert np.abs(traces).max() <= 1e-13


@settings(max_examples=50)
@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite),
       arrays(float, (3, 3), elements=finite))
def test_cancellation_property(q, b, g):
    gap, _ = tn.cancellation_residuals(q[:, None], b[:, None], g[:, :, None])
    assert gap[0] <= 1e-12


def test_kernels_agree_with_numpy_twins():
    rng = np.random.default_rng(8)
    n = 64
    q, b, lap = (tn.random_q(rng, (n,)) for _ in range(3))
    g = rng.normal(size=(3, 3, n))
    gq = rng.normal(size=(2, 5, n))
    c = rng.uniform(0.5, 1.5, n)
    a1, r1 = tn.q_local_rhs(q, g, c, 1.0, 1.0, 0.5)
    a2, r2 = tn._q_local_rhs_numpy(q, g, c, 1.0, 1.0, 0.5)
    np.testing.assert_allclose(a1, a2, atol=1e-12)
    np.testing.assert_allclose(tn.stress_kernel(q, lap, gq, c, 1.0, 0.3),
                               tn._stress_numpy(q, lap, gq, c, 1.0, 0.3), atol=1e-12)
    for x, y in zip(tn.cancellation_kernel(q, b, g), tn._cancellation_numpy(q, b, g)):
        np.testing.assert_allclose(x, y, atol=1e-12)
