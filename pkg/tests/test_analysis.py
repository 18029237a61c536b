import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinsinglet.analysis import (
    RegimeWarning,
    entanglement_witness,
    heralded_fidelity,
    protocol_efficiency,
    regime_check,
    spin_length,
    split_by_jumps,
    write_histogram_csv,
)
from spinsinglet.collective import SpinStateVector, basis_state, build_basis, dicke_state, singlet_vector
from spinsinglet.models import EffectiveDickeParams, HilbertSpace
from spinsinglet.trajectories import DensityMatrix, TrajectoryRecord


@pytest.mark.parametrize("S2, S", [(0.0, 0.0), (6.0, 2.0), (2.0, 1.0)])
def test_spin_length_examples(S2, S):
    assert spin_length(S2) == pytest.approx(S, abs=1e-15)


def test_spin_length_inverts_on_integers():
    S = np.arange(0, 41)
    np.testing.assert_allclose(spin_length(S * (S + 1.0)), S, atol=1e-12)
    with pytest.raises(ValueError):
        spin_length(-0.1)


@pytest.mark.parametrize("N", [2, 6, 20])
def test_witness_on_singlet_and_m0(N):
    b = build_basis(N)
    r = entanglement_witness(singlet_vector(b))
    assert abs(r.S2) < 1e-10 and r.margin == pytest.approx(N) and r.entangled
    r = entanglement_witness(basis_state(b, 0, N, 0))
    assert r.S2 == pytest.approx(2 * N) and r.margin == pytest.approx(-N) and not r.entangled
    assert r.unentangled_bound == N and r.bound_label.startswith("placeholder")


def test_witness_moment_identity_random_states():
    rng = np.random.default_rng(0)
    b = build_basis(5)
    for _ in range(5):
        amps = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
        r = entanglement_witness(SpinStateVector(b, amps / np.linalg.norm(amps)))
        assert r.S2 == pytest.approx(r.Sx2 + r.Sy2 + r.Sz2, abs=1e-10)
        assert r.S2 >= 0


def test_witness_density_matrix_and_composite():
    N = 4
    b = build_basis(N)
    mix = 0.5 * (np.outer(*(2 * [singlet_vector(b).amplitudes])) + np.outer(*(2 * [dicke_state(b, 2, 0).amplitudes])))
    r = entanglement_witness(DensityMatrix(HilbertSpace("spin", N), mix.astype(complex)))
    assert r.S2 == pytest.approx(3.0)
    space = HilbertSpace("spin_cavity", N, 3)
    r = entanglement_witness(space.with_vacuum(dicke_state(b, 2, 0).amplitudes), space)
    assert r.S2 == pytest.approx(6.0)
    with pytest.raises(ValueError):
        entanglement_witness(np.ones(3), HilbertSpace("pair", 4))
    with pytest.raises(ValueError):
        entanglement_witness(np.ones(3))


def test_report_json(tmp_path):
    r = entanglement_witness(singlet_vector(build_basis(2)))
    data = json.loads(r.to_json(tmp_path / "w.json"))
    assert data["entangled"] is True
    assert json.loads((tmp_path / "w.json").read_text()) == data


def test_heralded_fidelity_endpoints():
    assert heralded_fidelity(10, 1.0).fidelity == pytest.approx(1.0, abs=1e-15)
    assert heralded_fidelity(10, 0.0).fidelity == pytest.approx(1 / 11, abs=1e-14)
    assert heralded_fidelity(2, 0.5).fidelity == pytest.approx(2 / 3, abs=1e-14)
    with pytest.raises(ValueError):
        heralded_fidelity(4, 1.5)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 10, 30]), st.floats(0, 1), st.floats(0, 1))
def test_heralded_fidelity_monotone(N, a, b):
    lo, hi = sorted((a, b))
    f_lo, f_hi = heralded_fidelity(N, lo).fidelity, heralded_fidelity(N, hi).fidelity
    assert 0 <= f_lo <= f_hi + 1e-15 <= 1 + 1e-15


def record(index, n_jumps, S2, overlap):
    times = np.array([0.0, 1.0])
    return TrajectoryRecord(
        index=index, seed=0, times=times, jump_times=np.arange(n_jumps, dtype=float) * 0.1 + 0.05,
        jump_channels=np.zeros(n_jumps, dtype=int), S2=np.array([8.0, S2]),
        singlet_overlap=np.array([0.2, overlap]), norm=np.ones(2),
        jump_counts=np.array([[0], [n_jumps]]),
    )


def test_split_by_jumps():
    recs = [record(0, 0, 0.01, 0.99), record(1, 1, 6.1, 0.0), record(2, 2, 5.9, 0.0),
            record(3, 0, 0.0, 1.0), record(4, 3, 20.0, 0.0)]
    s = split_by_jumps(recs)
    assert s.n_traj == 5 and s.no_jump.count + s.with_jumps.count == 5
    assert s.no_jump_fraction == pytest.approx(0.4)
    assert s.with_jumps.modal_S2() == 6.0 and s.no_jump.modal_S2() == 0.0
    np.testing.assert_array_equal(s.spin_bins, [0, 2, 4])
    np.testing.assert_array_equal(s.spin_counts, [2, 2, 1])
    assert json.loads(s.to_json())["no_jump_fraction"] == pytest.approx(0.4)


def test_split_all_quiet():
    s = split_by_jumps([record(i, 0, 0.0, 1.0) for i in range(3)])
    assert s.no_jump_fraction == 1.0 and s.with_jumps.count == 0
    assert math.isnan(s.with_jumps.modal_S2())
    with pytest.raises(ValueError):
        split_by_jumps([])


def test_histogram_csv(tmp_path):
    write_histogram_csv([0.0, 2.0], [3, 4], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "bin_center,count\n0.0,3\n2.0,4\n"


def test_regime_check():
    with pytest.warns(RegimeWarning):
        r = regime_check(EffectiveDickeParams(0, 0, 6.0, 0, 1.0, 10))
    assert r.ratio == pytest.approx(6 * math.sqrt(0.3)) and not r.ok
    assert regime_check(EffectiveDickeParams(0, 0, 100.0, 0, 1.0, 10)).ok
    assert regime_check(EffectiveDickeParams(0, 0, 1.0, 0, 1e-9, 10)).ok


def test_protocol_efficiency():
    assert protocol_efficiency(1.0, 1 / 1001) == pytest.approx(0.000999, abs=1e-6)
    assert protocol_efficiency(1.0, 0.15) == pytest.approx(0.15)
    assert protocol_efficiency(1.0, 0.15, 10) == pytest.approx(1 - 0.85**10)
    assert protocol_efficiency(1.0, 0.15, 10) == pytest.approx(0.8031, abs=1e-4)
    for bad in [(1.2, 0.1, 1), (0.5, 0.5, 0), (0.5, 0.5, 1.5)]:
        with pytest.raises(ValueError):
            protocol_efficiency(*bad)
