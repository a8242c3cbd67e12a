import numpy as np
import pytest

from lcgalerkin import noise as nz
from lcgalerkin import spectral as sp
from lcgalerkin.spectral import COS, SIN, Grid

GRID = Grid.cube(2, 14)
N = 8


def smooth_state(seed=0, rho_const=None):
    rng = np.random.default_rng(seed)
    x, y = GRID.mesh
    rho = 1.0 + 0.3 * np.cos(np.pi * x) * np.cos(np.pi * y) if rho_const is None else np.full(GRID.shape, rho_const)
    u = rng.normal(size=2)[:, None, None] * np.sin(np.pi * x) * np.sin(np.pi * y)
    c = 1.0 + 0.2 * np.cos(2 * np.pi * x)
    gq = 0.5 + 0.1 * np.cos(np.pi * y)
    return rho, u, c, gq


def test_increments_reproducible():
    p = nz.WienerPath(42, 1e-3, 8)
    np.testing.assert_array_equal(p.sample_increment(17), p.sample_increment(17))
    np.testing.assert_array_equal(nz.sample_increment(nz.WienerPath(42, 1e-3, 8), 17),
                                  p.sample_increment(17))
    assert not np.array_equal(p.sample_increment(17), p.sample_increment(18))
    assert not np.array_equal(nz.WienerPath(43, 1e-3, 8).sample_increment(17), p.sample_increment(17))


def test_increment_statistics():
    dt = 1e-3
    p = nz.WienerPath(7, dt, 1000)
    draws = np.concatenate([p.sample_increment(s) for s in range(100)])
    assert draws.size == 100_000
    assert abs(draws.mean()) <= 4 * np.sqrt(dt / draws.size)
    assert draws.var() == pytest.approx(dt, rel=0.05)


def test_refined_path_sums_fine_increments():
    fine = nz.WienerPath(9, 1e-4, 4)
    coarse = nz.WienerPath(9, 4e-4, 4, refine=4)
    np.testing.assert_allclose(coarse.sample_increment(3),
                               sum(fine.sample_increment(12 + j) for j in range(4)), atol=1e-15)


def test_model_invariants():
    m = nz.NoiseModel()
    assert m.lam_sq_sum() < sum(k ** -2.2 for k in range(1, 10 ** 5))
    psi = m.shape_values(GRID)
    assert psi.shape == (16,) + GRID.shape and np.abs(psi).max() <= 1.0
    with pytest.raises(ValueError):
        nz.NoiseModel(v0=(1.0, 1.0, 0.0))


def test_zero_coefficient():
    m = nz.NoiseModel(a_rho=0.0)
    f = nz.noise_coefficient(np.array([0.5]), np.zeros((2, 1)), np.zeros(1), np.zeros(1), 1, m, 1.0)
    assert np.all(f == 0)


def test_only_velocity_closed_form():
    m = nz.NoiseModel(a_rho=0.0, a_c=0.0, a_Q=0.0, a_u=0.3)
    u = np.array([[0.4], [-1.2]])
    psi = m.shape_values(GRID)[:, 3, 5]
    total = sum(np.sum(nz.noise_coefficient(np.ones(1), u, np.zeros(1), np.zeros(1), k, m,
                                            psi[k - 1]) ** 2) for k in range(1, m.n_modes + 1))
    expect = np.sum(m.lam ** 2 * psi ** 2) * 0.09 * np.sum(u ** 2)
    assert total == pytest.approx(expect, rel=1e-12)


def test_growth_condition_random_states():
    rng = np.random.default_rng(3)
    m = nz.NoiseModel(a_rho=0.4, a_u=0.2, a_c=0.3, a_Q=0.1)
    rho = rng.uniform(1e-3, 5, 5000)
    u = rng.normal(size=(2, 5000)) * 3
    c = rng.normal(size=5000) * 4
    gq = np.abs(rng.normal(size=5000)) * 10
    lhs, rhs = nz.growth_sides(rho, u, c, gq, m)
    assert np.all(lhs <= rhs)


def test_vacuum_rejected():
    with pytest.raises(nz.VacuumError):
        nz.common_vector(np.array([1.0, 0.0]), np.zeros((2, 2)), np.zeros(2), np.zeros(2), nz.NoiseModel())


def test_forcing_zero_increment():
    rho, u, c, gq = smooth_state()
    m = nz.NoiseModel()
    out = nz.stochastic_forcing(rho, u, c, gq, np.zeros(16), m, GRID, N)
    assert np.all(out == 0)


def test_forcing_unit_density_is_plain_projection():
    # rho = 1 and a velocity-only coefficient already in X_n
    m = nz.NoiseModel(n_modes=1, a_rho=0.0, a_c=0.0, a_Q=0.0, a_u=1.0)
    rho, u, c, gq = smooth_state(rho_const=1.0)
    out = nz.stochastic_forcing(rho, u, c, gq, np.array([0.3]), m, GRID, N)
    expect = sp.forward(0.3 * u, SIN, GRID)
    np.testing.assert_allclose(out, np.where(GRID.mode_mask(N), expect, 0), atol=1e-13)


def test_forcing_density_four_scales():
    m = nz.NoiseModel(n_modes=3)
    rho, u, c, gq = smooth_state(rho_const=4.0)
    dW = np.array([0.0, 0.2, 0.0])
    out = nz.stochastic_forcing(rho, u, c, gq, dW, m, GRID, N)
    psi = m.shape_values(GRID)
    g = nz.common_vector(rho, u, c, gq, m)
    # g mixes cosine (v0 part) and sine (u part) parity, so rebuild it the same way
    cos_part = np.asarray(m.v0)[:2, None, None] * (g[:2] - m.a_u * u)
    inner = (sp.project_values(2.0 * m.lam[1] * psi[1] * cos_part, (COS, COS), SIN, GRID, N)
             + sp.project_values(2.0 * m.lam[1] * psi[1] * m.a_u * u, SIN, SIN, GRID, N))
    outer = 2.0 * sp.inverse(inner, SIN, GRID)
    expect = sp.project_values(outer, SIN, SIN, GRID, N) * 0.2
    np.testing.assert_allclose(out, expect, atol=1e-13)


def test_hs_norm_examples():
    rho, u, c, gq = smooth_state()
    assert nz.hs_norm(rho, u, c, gq, nz.NoiseModel(n_modes=0), GRID) == 0.0
    m = nz.NoiseModel(n_modes=1, a_rho=0.5, a_u=0.0, a_c=0.0, a_Q=0.0)
    ones = np.ones(GRID.shape)
    val = nz.hs_norm(ones, np.zeros((2,) + GRID.shape), ones, ones, m, GRID)
    assert val == pytest.approx(0.5 * np.sqrt(GRID.volume))
    # brute force, one mode at a time
    m = nz.NoiseModel(n_modes=5)
    psi = m.shape_values(GRID)
    tot = 0.0
    for k in range(1, 6):
        fe = nz.noise_coefficient(rho, u, c, gq, k, m, psi[k - 1])
        tot += GRID.integrate(rho * np.sum(fe ** 2, axis=0))
    assert nz.hs_norm(rho, u, c, gq, m, GRID) == pytest.approx(np.sqrt(tot), rel=1e-12)


def test_auxiliary_norm():
    assert nz.auxiliary_norm([1.0]) == 1.0
    assert nz.auxiliary_norm([0.0, 1.0]) == 0.5
    assert nz.auxiliary_norm([1.0, 1.0]) == pytest.approx(np.sqrt(1.25))


def _pointwise(rho, u, c, q, gq):
    return {"rho": rho, "u": u, "c": c, "q": q, "grad_q_norm": gq}


def test_continuity_check():
    rng = np.random.default_rng(4)
    m = nz.NoiseModel()
    base = _pointwise(rng.uniform(0.5, 2, 50), rng.normal(size=(2, 50)), rng.uniform(0.5, 1.5, 50),
                      rng.normal(size=(5, 50)), rng.uniform(0.1, 1, 50))
    rep = nz.continuity_check(base, base, m)
    assert rep.passed and rep.worst_ratio == 0.0
    ratios = []
    for h in (1e-1, 1e-2, 1e-3, 1e-4):
        other = {k: v + h for k, v in base.items()}
        ratios.append(nz.continuity_check(base, other, m).worst_ratio)
    assert max(ratios) < 10 * max(ratios[0], 1e-12)
    big = {k: v * 5 for k, v in base.items()}
    rep = nz.continuity_check(base, big, m, constant=1.0)
    assert np.isfinite(rep.worst_ratio) and rep.passed == (rep.worst_ratio <= 1.0)
