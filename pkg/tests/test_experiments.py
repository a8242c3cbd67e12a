import json

import numpy as np
import pytest

from lcgalerkin.checkpoint import (MAGIC, CheckpointError, CheckpointWriter, load_checkpoint,
                                   save_checkpoint)
from lcgalerkin.experiments import config as C
from lcgalerkin.experiments import diagnostics as dg
from lcgalerkin.experiments import ensemble as en
from lcgalerkin.experiments import report as rp
from lcgalerkin.experiments import sweeps as sw
from lcgalerkin.solver import (ConfigError, RegularizationParams, Stepper, build_initial_state, simulate,
                               state_from_values)
from lcgalerkin.spectral import Grid

SMALL = {"params": {"n": 4, "dt": 1e-2, "T": 0.05}, "ensemble": {"paths": 4, "seed": 99}}


def small(**sections):
    data = {k: dict(v) for k, v in SMALL.items()}
    for k, v in sections.items():
        data.setdefault(k, {}).update(v)
    return C.config_from_dict(data)


def final_u(res):
    return [r.series["u_l2"][-1] for r in res.paths]


# ------------------------------------------------------------- config

def test_default_config_valid():
    cfg = C.default_config()
    assert cfg.params.n == 32 and cfg.make_grid().n_points == (50, 50)
    assert C.config_from_dict(cfg.to_dict()) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        C.config_from_dict({"params": {"viscosity": 1.0}})
    with pytest.raises(ConfigError, match="unknown table"):
        C.config_from_dict({"solver": {}})


def test_config_value_errors():
    with pytest.raises(ConfigError):
        C.config_from_dict({"params": {"gamma": 1.2}})
    with pytest.raises(ConfigError):
        C.config_from_dict({"ensemble": {"seed": -1}})
    with pytest.raises(ConfigError):
        C.config_from_dict({"params": {"n": 8}, "grid": {"points": 10}})


def test_toml_load(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[params]\nn = 6\nepsilon = 0.02\n\n[noise]\nn_modes = 3\n\n'
                 '[ensemble]\npaths = 2\nseed = 0xFFFF\n')
    cfg = C.load_config(p)
    assert (cfg.params.n, cfg.params.eps, cfg.noise.n_modes, cfg.ensemble.seed) == (6, 0.02, 3, 65535)
    p.write_text("[params\nn = 1")
    with pytest.raises(ConfigError, match="invalid TOML"):
        C.load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        C.load_config(tmp_path / "missing.toml")


# ------------------------------------------------------------- checkpoints

def _state():
    cfg = small()
    stp = Stepper(cfg.make_grid(), cfg.params, cfg.noise)
    st, _ = build_initial_state(stp, cfg.initial)
    return cfg, stp, st


def test_checkpoint_round_trip(tmp_path):
    cfg, stp, st = _state()
    st.t, st.step = 0.25, 25
    path = save_checkpoint(tmp_path / "a.bin", st, stp.grid, cfg.params, seed=7)
    back, grid, params, header = load_checkpoint(path)
    assert grid.n_points == stp.grid.n_points and params == cfg.params and header["seed"] == 7
    for name in ("rho", "u", "m", "c", "q"):
        np.testing.assert_array_equal(getattr(back, name), getattr(st, name))
    assert (back.t, back.step) == (0.25, 25)


def test_checkpoint_corruption(tmp_path):
    cfg, stp, st = _state()
    path = save_checkpoint(tmp_path / "a.bin", st, stp.grid, cfg.params)
    raw = bytearray(path.read_bytes())
    assert raw[:8] == MAGIC
    raw[-3] ^= 0xFF
    bad = tmp_path / "b.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(bad)
    bad.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)


def test_checkpoint_resume_matches_straight_run(tmp_path):
    cfg, stp, st = _state()
    w = CheckpointWriter(tmp_path, stp.grid, cfg.params, every=2)
    straight = simulate(stp, st, None, 4, [w]).state
    assert [p.name for p in w.written] == [f"step_{i:08d}.bin" for i in (0, 2, 4)]
    mid, *_ = load_checkpoint(w.written[1])
    resumed = simulate(stp, mid, None, 2).state
    np.testing.assert_array_equal(resumed.u, straight.u)
    np.testing.assert_array_equal(resumed.rho, straight.rho)


# ------------------------------------------------------------- ensemble

def test_seeds_derived_deterministically():
    a = en.derive_seeds(5, 8)
    assert a == en.derive_seeds(5, 8) and len(set(a)) == 8
    assert en.derive_seeds(5, 3) == a[:3]
    assert a != en.derive_seeds(6, 8)
    assert all(0 <= s < 2 ** 64 for s in a)


def test_ensemble_reproducible_and_seed_sensitive():
    cfg = small()
    a, b = en.run_ensemble(cfg), en.run_ensemble(cfg)
    assert [r.status for r in a.paths] == ["completed"] * 4
    assert final_u(a) == final_u(b)
    c = en.run_ensemble(en.with_paths(cfg, seed=100))
    assert final_u(a) != final_u(c)


def test_noise_off_paths_identical():
    res = en.run_ensemble(small(noise={"n_modes": 0}))
    assert len(set(final_u(res))) == 1


def test_worker_count_independent():
    cfg = small(ensemble={"paths": 3})
    serial = en.run_ensemble(cfg, workers=1)
    pooled = en.run_ensemble(cfg, workers=2)
    assert final_u(serial) == final_u(pooled)
    part = en.run_ensemble(cfg, indices=[2])
    assert final_u(part) == final_u(serial)[2:]


def test_failed_path_captured():
    cfg = small(params={"dt": 5.0, "T": 50.0, "K": 1e6}, initial={"u_amp": 50.0})
    res = en.run_ensemble(en.with_paths(cfg, paths=2))
    assert len(res.paths) == 2
    assert all(r.status in ("failed", "halted", "completed") for r in res.paths)
    for r in res.by_status("failed"):
        assert r.error


def test_mean_se():
    assert en.mean_se([]) == (pytest.approx(np.nan, nan_ok=True), None)
    assert en.mean_se([2.0]) == (2.0, None)
    m, se = en.mean_se([1.0, 3.0])
    assert (m, se) == (2.0, pytest.approx(1.0))


def test_summary_rows():
    res = en.run_ensemble(small())
    rows = en.summarize(res)
    energy = [r for r in rows if r["quantity"] == "energy"]
    assert energy and all(r["count"] == 4 for r in energy)
    assert all(r["min"] <= r["mean"] <= r["max"] for r in rows)


# ------------------------------------------------------------- diagnostics

def test_theta_range():
    lo, hi = dg.theta_range(5 / 3)
    assert (lo, hi) == (0.0, pytest.approx(1 / 9))
    assert dg.default_theta(5 / 3) == pytest.approx(1 / 18)
    with pytest.raises(ConfigError):
        dg.check_theta(0.2, 5 / 3, "delta")
    with pytest.raises(ConfigError):
        dg.check_theta(0.5, 5 / 3, "eps")
    assert dg.check_theta(1.0, 5 / 3, "eps") == 1.0


def test_integrability_constant_density():
    g = Grid.cube(2, 8, 1.5)
    p = RegularizationParams()
    a, b = dg.integrability_values(g, np.full(g.shape, 2.0), p, 0.1)
    assert a == pytest.approx(2.0 ** (p.gamma + 0.1) * g.volume)
    assert b == pytest.approx(p.delta * 2.0 ** (p.beta + 0.1) * g.volume)


def test_flux_pairing_at_rest():
    p = RegularizationParams(n=4, dt=1e-2, T=0.1)
    stp = Stepper(Grid.cube(2, 8), p)
    g = stp.grid
    st = state_from_values(stp, np.ones(g.shape), np.zeros((2,) + g.shape), np.ones(g.shape),
                           np.zeros((5,) + g.shape))
    probe = dg.FluxPairingProbe(k_list=(1.0, 2.0), T=p.T)
    simulate(stp, st, None, p.n_steps, [probe])
    for k in (1.0, 2.0):
        assert probe.values[k] == pytest.approx((1.0 + p.delta) * p.T, rel=1e-12)
    gap = dg.flux_pairing({1.0: [1.0, 2.0]}, {1.0: 1.25})
    assert gap == {1.0: 0.25}
    with pytest.raises(ValueError):
        dg.flux_pairing({1.0: 1.0}, {2.0: 1.0})


def test_defect_constant_densities():
    g = Grid.cube(2, 8)
    gamma = 5 / 3
    t = np.linspace(0, 0.5, 6)
    two, one = [np.full(g.shape, 2.0)] * 6, [np.ones(g.shape)] * 6
    d = dg.defect_from_values(t, two, one, (1.0, 4.0), gamma, g)
    assert d["per_k"][4.0] == pytest.approx(0.5)
    assert d["per_k"][1.0] == pytest.approx(0.75 ** (gamma + 1) * 0.5)
    assert d["max"] == d["per_k"][4.0]
    assert dg.defect_from_values(t, one, one, (1.0,), gamma, g)["max"] == 0.0


def test_plateau_ratio():
    assert dg.plateau_ratio([1.0, 1.5, 1.2]) == 1.5
    assert dg.plateau_ratio([0.0, 1.0]) == float("inf")


# ------------------------------------------------------------- sweeps

def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        sw.SweepSpec("gamma", (1.0, 2.0))
    with pytest.raises(ConfigError):
        sw.SweepSpec("eps", ())
    with pytest.raises(ConfigError):
        sw.SweepSpec("eps", (0.1, 0.3, 0.2))


def test_paired_paths_share_brownian_increments():
    cfg = small(ensemble={"fine_dt": 2.5e-3})
    a = sw.SweepSpec("eps", (0.1, 0.01))
    s1 = en.derive_seeds(a.apply(cfg, 0.1).ensemble.seed, 4)
    s2 = en.derive_seeds(a.apply(cfg, 0.01).ensemble.seed, 4)
    assert s1 == s2
    coarse = en.wiener_path(cfg, s1[0])
    fine = en.wiener_path(cfg.with_params(dt=2.5e-3), s1[0])
    np.testing.assert_allclose(coarse.sample_increment(1),
                               sum(fine.sample_increment(4 + j) for j in range(4)), atol=1e-15)
    unpaired = sw.SweepSpec("eps", (0.1, 0.01), paired=False)
    assert unpaired.apply(cfg, 0.1).ensemble.seed != cfg.ensemble.seed


def test_count_breaks():
    assert sw.count_breaks([3, 2, 1]) == 0
    assert sw.count_breaks([3, 4, 1]) == 1
    lad = sw.LadderResult([], [3.0, 4.0, 2.0], [], {}, 1)
    assert lad.trending
    assert not sw.LadderResult([], [3.0, 4.0, 5.0], [], {}, 2).trending


def test_small_eps_sweep():
    res = sw.sweep_eps(small(ensemble={"paths": 2}), values=(0.1, 0.01))
    assert [p.value for p in res.points] == [0.1, 0.01]
    assert all(p.statuses["completed"] == 2 for p in res.points)
    assert res.ratio == pytest.approx(max(p.mean for p in res.points) / min(p.mean for p in res.points))
    assert len(res.rows()) == 2


# ------------------------------------------------------------- report

def _ensemble_report(tmp_path, paths):
    cfg = en.with_paths(small(), paths=paths)
    res = en.run_ensemble(cfg, tmp_path)
    rows = en.summarize(res)
    info = rp.emit_ensemble_report(tmp_path, res, rows)
    rp.write_manifest(tmp_path, "simulate", cfg.to_dict(), res.seeds, rp.path_table(res),
                      res.started, res.finished, info["status"])
    return info, (tmp_path / "digest.txt").read_text()


def test_report_empty_ensemble(tmp_path):
    info, digest = _ensemble_report(tmp_path, 0)
    assert info["status"] == "nothing to report" and "nothing to report" in digest
    assert rp.rebuild_report(tmp_path) == "nothing to report"


def test_report_single_path(tmp_path):
    _, digest = _ensemble_report(tmp_path, 1)
    assert "standard errors are undefined" in digest
    rows = rp.read_csv(tmp_path / "summary.csv")
    assert rows and all(r["se"] == "undefined" for r in rows)


def test_manifest_inventory(tmp_path):
    _ensemble_report(tmp_path, 2)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["master_seed"] == 99 and len(man["path_seeds"]) == 2
    listed = {e["path"] for e in man["files"]}
    assert {"summary.csv", "digest.txt", "monitors/path_0000.ndjson", "plots/energy.svg"} <= listed
    assert rp.verify_inventory(tmp_path) == []
    (tmp_path / "summary.csv").write_text("tampered\n")
    assert rp.verify_inventory(tmp_path) == ["summary.csv"]
    assert rp.rebuild_report(tmp_path) == "ok"
    assert rp.verify_inventory(tmp_path) == []
