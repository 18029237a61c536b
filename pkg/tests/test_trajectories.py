import numpy as np
import pytest
import scipy.sparse as sp

from spinsinglet.collective import basis_state, build_basis, dicke_state, singlet_vector
from spinsinglet.models import (
    CavitySpace,
    EffectiveDickeParams,
    EffectiveModel,
    HamiltonianTerm,
    HilbertSpace,
    SpinorModelParams,
    SweepSchedule,
    build_dicke_model,
    build_spinor_model,
)
from spinsinglet.reduced import NumericalError
from spinsinglet.trajectories import (
    DensityMatrix,
    TrajectoryConfig,
    integrate_master_equation,
    no_jump_evolution,
    run_ensemble,
    run_trajectory,
    trajectory_rng,
    write_summary_csv,
    write_trajectory_csv,
)

SWEEP = SweepSchedule("exponential", 7.0, 0.08)


def tc_model(N, lam=6.0, n_max=None):
    cav = CavitySpace(n_max) if n_max else CavitySpace.default(N)
    return build_dicke_model(EffectiveDickeParams(0.0, 0.0, lam, 0.0, 1.0, N), build_basis(N), cav)


def spinor(N, gamma):
    return build_spinor_model(SpinorModelParams(1.0, gamma, 0.0, N), SWEEP, build_basis(N))


def m0(model):
    b = build_basis(model.space.N)
    return model.space.with_vacuum(basis_state(b, 0, b.N, 0).amplitudes)


@pytest.mark.parametrize("kw", [
    dict(dt=0.0, t_max=1.0, sample_interval=0.1),
    dict(dt=0.1, t_max=1.0, sample_interval=0.05),
    dict(dt=0.1, t_max=1.05, sample_interval=0.1),
    dict(dt=0.1, t_max=1.0, sample_interval=0.3),
    dict(dt=0.1, t_max=1.0, sample_interval=0.1, n_traj=0),
    dict(dt=0.1, t_max=1.0, sample_interval=0.1, seed=-1),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrajectoryConfig(**kw)


def test_config_grid():
    cfg = TrajectoryConfig(dt=0.01, t_max=2.0, sample_interval=0.5)
    assert (cfg.n_steps, cfg.sample_every, cfg.n_samples) == (200, 50, 5)
    assert cfg.tolerance == pytest.approx(1e-5)
    np.testing.assert_allclose(cfg.times, [0, 0.5, 1.0, 1.5, 2.0])


def test_rng_streams_are_keyed():
    a = trajectory_rng(5, 0).random(4)
    np.testing.assert_array_equal(a, trajectory_rng(5, 0).random(4))
    assert not np.array_equal(a, trajectory_rng(5, 1).random(4))
    assert not np.array_equal(a, trajectory_rng(6, 0).random(4))


def test_dark_state_never_jumps():
    m = tc_model(6)
    psi = m.space.with_vacuum(singlet_vector(build_basis(6)).amplitudes)
    rec = run_trajectory(m, psi, TrajectoryConfig(0.005, 5.0, 0.5, seed=1))
    assert rec.n_jumps == 0
    np.testing.assert_allclose(rec.singlet_overlap, 1.0, atol=1e-12)
    np.testing.assert_allclose(rec.norm, 1.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_excitation_ledger(k):
    N = 6
    m = tc_model(N)
    b = build_basis(N)
    psi = m.space.with_vacuum(dicke_state(b, 2 * k, 0).amplitudes)
    target = m.space.with_vacuum(dicke_state(b, 2 * k, -2 * k).amplitudes)
    ens = run_ensemble(m, psi, TrajectoryConfig(0.005, 30.0, 0.5, seed=4, n_traj=5))
    for rec in ens.records:
        assert rec.n_jumps == 2 * k
        assert abs(np.vdot(target, rec.final_state)) ** 2 == pytest.approx(1.0, abs=1e-8)
        ledger = rec.observable("n_jumps") + rec.extras["excitation"] - rec.extras["excitation"][0]
        np.testing.assert_allclose(ledger, 0.0, atol=1e-6)
        assert np.all(np.diff(rec.jump_times) > 0)


def test_lossless_spinor_is_unitary():
    m = spinor(10, 0.0)
    rec = run_trajectory(m, m0(m), TrajectoryConfig(0.005, 20.0, 1.0, seed=2))
    assert rec.n_jumps == 0 and m.channels == ()
    np.testing.assert_allclose(rec.norm, 1.0, atol=1e-6)
    assert np.linalg.norm(rec.final_state) == pytest.approx(1.0, abs=1e-12)


def test_jumps_leave_singlet_sector():
    m = spinor(10, 0.05)
    ens = run_ensemble(m, m0(m), TrajectoryConfig(0.005, 40.0, 1.0, seed=9, n_traj=40))
    quiet = [r for r in ens.records if r.n_jumps == 0]
    loud = [r for r in ens.records if r.n_jumps > 0]
    assert quiet and loud
    for r in loud:
        after = r.times > r.jump_times[0]
        assert np.all(r.singlet_overlap[after] < 1e-10)
    for r in quiet:
        assert np.all(r.singlet_overlap > 0)
        assert np.all(np.diff(r.norm) <= 1e-12)


def test_ensemble_determinism_and_threads():
    m = spinor(8, 0.05)
    cfg = TrajectoryConfig(0.005, 20.0, 1.0, seed=11, n_traj=12)
    a = run_ensemble(m, m0(m), cfg)
    b = run_ensemble(m, m0(m), cfg, threads=4)
    for ra, rb in zip(a.records, b.records):
        assert ra.index == rb.index
        np.testing.assert_array_equal(ra.S2, rb.S2)
        np.testing.assert_array_equal(ra.jump_times, rb.jump_times)
        np.testing.assert_array_equal(ra.final_state, rb.final_state)
    # the shared no-jump cache reproduces a direct run exactly
    for i in (0, 5, 11):
        d = run_trajectory(m, m0(m), cfg, i)
        np.testing.assert_array_equal(d.S2, a.records[i].S2)
        np.testing.assert_array_equal(d.final_state, a.records[i].final_state)


def test_single_trajectory_average():
    m = spinor(6, 0.02)
    ens = run_ensemble(m, m0(m), TrajectoryConfig(0.01, 5.0, 1.0, seed=1, n_traj=1))
    np.testing.assert_array_equal(ens.mean("S2"), ens.records[0].S2)
    assert set(ens.averages) >= {"S2", "singlet_overlap", "n_jumps", "norm", "Sz", "N0"}


def test_no_jump_evolution_matches_record():
    m = spinor(8, 0.0)
    cfg = TrajectoryConfig(0.005, 10.0, 2.0)
    times, states = no_jump_evolution(m, m0(m), cfg)
    rec = run_trajectory(m, m0(m), cfg)
    np.testing.assert_allclose(states[-1], rec.final_state, atol=1e-12)
    assert times.tolist() == cfg.times.tolist()


def test_truncation_monitor_flags_record():
    m = tc_model(6, lam=20.0, n_max=1)
    rec = run_trajectory(m, m0(m), TrajectoryConfig(0.002, 1.0, 0.1, seed=1))
    assert not rec.valid and "truncation" in rec.status


def test_norm_growth_aborts_with_diagnostic():
    m = spinor(10, 0.01)
    rec = run_trajectory(m, m0(m), TrajectoryConfig(0.5, 10.0, 1.0))
    assert not rec.valid and "reduce dt" in rec.status


def test_bad_initial_state():
    m = spinor(4, 0.0)
    with pytest.raises(ValueError):
        run_trajectory(m, np.ones(m.dim), TrajectoryConfig(0.01, 1.0, 0.5))
    with pytest.raises(ValueError):
        run_trajectory(m, np.ones(3) / np.sqrt(3), TrajectoryConfig(0.01, 1.0, 0.5))


def test_master_equation_trivial_cases():
    space = HilbertSpace("spin", 2)
    zero = EffectiveModel("spinor", space, (HamiltonianTerm(sp.csr_matrix((6, 6), dtype=complex), 0.0),))
    rho = DensityMatrix.from_pure(space, basis_state(build_basis(2), 1, 0, 1))
    res = integrate_master_equation(zero, rho, TrajectoryConfig(0.1, 2.0, 0.5))
    for s in res.states:
        np.testing.assert_array_equal(s, rho.matrix)

    m = tc_model(4, n_max=4)
    dark = DensityMatrix.from_pure(m.space, m.space.with_vacuum(singlet_vector(build_basis(4)).amplitudes))
    res = integrate_master_equation(m, dark, TrajectoryConfig(0.005, 2.0, 0.5))
    np.testing.assert_allclose(res.states[-1], dark.matrix, atol=1e-12)
    res[-1].check()


def test_master_equation_conserves_trace_and_positivity():
    m = spinor(4, 0.2)
    rho0 = DensityMatrix.from_pure(m.space, m0(m))
    # RK4 error shows up as O(dt^4) negative eigenvalues of the rank-one start
    res = integrate_master_equation(m, rho0, TrajectoryConfig(0.0025, 10.0, 1.0))
    for i in range(len(res.times)):
        res[i].check()
    s2 = res.expect(m.space.spin_operator("S2"))
    assert s2[0] == pytest.approx(8.0)


def test_master_equation_dimension_cap():
    m = tc_model(10)
    rho0 = DensityMatrix.from_pure(m.space, m0(m))
    with pytest.raises(ValueError, match="cap"):
        integrate_master_equation(m, rho0, TrajectoryConfig(0.01, 0.1, 0.1), max_dim=100)


def test_density_matrix_check():
    space = HilbertSpace("spin", 1)
    with pytest.raises(NumericalError):
        DensityMatrix(space, np.diag([0.5, 0.4, 0.0]).astype(complex)).check()
    with pytest.raises(NumericalError):
        DensityMatrix(space, np.diag([1.2, -0.2, 0.0]).astype(complex)).check()


def test_small_ensemble_tracks_master_equation():
    m = spinor(4, 0.3)
    cfg = TrajectoryConfig(0.01, 10.0, 1.0, seed=21, n_traj=600)
    ens = run_ensemble(m, m0(m), cfg)
    ref = integrate_master_equation(m, DensityMatrix.from_pure(m.space, m0(m)), cfg)
    s2 = ref.expect(m.space.spin_operator("S2"))
    z = np.abs(ens.mean("S2") - s2)[1:] / ens.stderr("S2")[1:]
    assert z.max() < 4


def test_csv_writers(tmp_path):
    m = spinor(6, 0.05)
    ens = run_ensemble(m, m0(m), TrajectoryConfig(0.01, 2.0, 1.0, seed=3, n_traj=3))
    write_trajectory_csv(ens.records, tmp_path / "t.csv")
    write_summary_csv(ens.records, tmp_path / "s.csv")
    t = (tmp_path / "t.csv").read_text().splitlines()
    s = (tmp_path / "s.csv").read_text().splitlines()
    assert t[0] == "traj_id,t,S2,singlet_overlap,n_jumps,norm" and len(t) == 1 + 3 * 3
    assert s[0].startswith("traj_id,seed,n_jumps,final_S2,final_overlap") and len(s) == 4


def test_negative_lambda_is_conjugate_problem():
    b = build_basis(6)
    cfg = TrajectoryConfig(0.005, 20.0, 1.0, seed=8, n_traj=10)
    runs = []
    for lam in (1.0, -1.0):
        m = build_spinor_model(SpinorModelParams(lam, 0.05, 0.0, 6), SWEEP, b)
        runs.append(run_ensemble(m, m0(m), cfg))
    for a, c in zip(*(r.records for r in runs)):
        assert a.n_jumps == c.n_jumps
        np.testing.assert_allclose(a.S2, c.S2, atol=1e-9)
        np.testing.assert_allclose(a.final_state, c.final_state.conj(), atol=1e-9)
