import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle import projected_ops
from spinsinglet.collective import (
    OPERATOR_NAMES,
    ORDER_TAG,
    DecompositionError,
    SpinStateVector,
    basis_state,
    build_basis,
    collective_operator,
    dicke_decomposition,
    dicke_state,
    pair_indices,
    singlet_coefficients,
    singlet_vector,
)


def dense(basis, name):
    return collective_operator(basis, name).toarray()


@pytest.mark.parametrize("N, dim", [(1, 3), (2, 6), (40, 861)])
def test_basis_dimension(N, dim):
    assert build_basis(N).dim == dim


@pytest.mark.parametrize("N", [0, -1, 2.5])
def test_basis_rejects_bad_N(N):
    with pytest.raises(ValueError):
        build_basis(N)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=30))
def test_index_is_a_bijection(N):
    b = build_basis(N)
    assert all(b.index(*t) == i for i, t in enumerate(b))
    assert (b.states >= 0).all() and (b.states.sum(axis=1) == N).all()


def test_single_spin_sz_order():
    np.testing.assert_array_equal(np.diag(dense(build_basis(1), "Sz")).real, [-1, 0, 1])


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_operators_match_symmetrized_product_space(N):
    b = build_basis(N)
    ref = projected_ops(N, list(b))
    for name in OPERATOR_NAMES:
        np.testing.assert_allclose(dense(b, name), ref[name], atol=1e-12, err_msg=name)


@pytest.mark.parametrize("N", [2, 5, 12, 20])
def test_commutators(N):
    b = build_basis(N)
    sp, sm, sz = (dense(b, w) for w in ("Splus", "Sminus", "Sz"))
    np.testing.assert_allclose(sz @ sp - sp @ sz, sp, atol=1e-10)
    np.testing.assert_allclose(sz @ sm - sm @ sz, -sm, atol=1e-10)
    np.testing.assert_allclose(sp @ sm - sm @ sp, 2 * sz, atol=1e-10)
    np.testing.assert_allclose(sp.conj().T, sm, atol=0)


@pytest.mark.parametrize("N", [2, 7, 20, 60])
def test_m0_state_has_S2_equal_2N(N):
    b = build_basis(N)
    psi = basis_state(b, 0, N, 0)
    assert psi.expect(collective_operator(b, "S2")).real == pytest.approx(2 * N, abs=1e-9)


def test_hermitian_operators():
    b = build_basis(6)
    for name in ("Sx", "Sy", "Sz", "S2", "Sperp2", "N0"):
        op = dense(b, name)
        np.testing.assert_allclose(op, op.conj().T, atol=1e-12)


def test_operators_are_read_only():
    op = collective_operator(build_basis(3), "Sz")
    with pytest.raises(ValueError):
        op.data[0] = 5.0


def test_unknown_operator():
    with pytest.raises(ValueError):
        collective_operator(build_basis(2), "Sw")


def test_singlet_coefficients_small_N():
    np.testing.assert_allclose(singlet_coefficients(2), [1 / np.sqrt(3), -np.sqrt(2) / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(
        singlet_coefficients(4), [1 / np.sqrt(5), -2 / np.sqrt(15), 2 * np.sqrt(2) / np.sqrt(15)], atol=1e-15
    )


@pytest.mark.parametrize("N", [2, 4, 10, 40, 200])
def test_singlet_is_annihilated(N):
    b = build_basis(N)
    s = singlet_vector(b)
    assert np.sum(singlet_coefficients(N) ** 2) == pytest.approx(1.0, abs=1e-12)
    assert abs(s.expect(collective_operator(b, "S2"))) < 1e-10
    for name in ("Splus", "Sminus"):
        assert np.linalg.norm(collective_operator(b, name) @ s.amplitudes) < 1e-10


def test_odd_N_has_no_singlet():
    with pytest.raises(ValueError, match="even N required"):
        singlet_vector(build_basis(3))
    with pytest.raises(ValueError, match="even N required"):
        dicke_decomposition(build_basis(5))


@pytest.mark.parametrize("N", [2, 4, 10, 30])
def test_decomposition_properties(N):
    b = build_basis(N)
    comps = dicke_decomposition(b)
    assert [c.k for c in comps] == list(range(N // 2 + 1))
    assert sum(c.weight for c in comps) == pytest.approx(1.0, abs=1e-10)
    assert comps[0].weight == pytest.approx(1 / (N + 1), abs=1e-12)
    s2 = collective_operator(b, "S2")
    for c in comps:
        assert c.state.expect(s2).real == pytest.approx(2 * c.k * (2 * c.k + 1), abs=1e-8)
        amp0 = c.state.amplitudes[b.index(0, N, 0)]
        assert abs(amp0.imag) < 1e-14 and amp0.real >= 0
    assert abs(np.vdot(comps[0].state.amplitudes, singlet_vector(b).amplitudes)) > 1 - 1e-10


def test_decomposition_N2():
    comps = dicke_decomposition(build_basis(2))
    assert comps[1].weight == pytest.approx(2 / 3, abs=1e-12)


def test_decomposition_peak_N100():
    w = [c.weight for c in dicke_decomposition(build_basis(100))]
    assert int(np.argmax(w)) == 5
    assert 5 <= np.argmax(w) <= 20


@pytest.mark.parametrize("S, M", [(0, 0), (2, 0), (2, -2), (4, 3), (6, -6)])
def test_dicke_state(S, M):
    b = build_basis(6)
    psi = dicke_state(b, S, M)
    assert psi.expect(collective_operator(b, "S2")).real == pytest.approx(S * (S + 1), abs=1e-9)
    assert psi.expect(collective_operator(b, "Sz")).real == pytest.approx(M, abs=1e-12)


@pytest.mark.parametrize("S, M", [(1, 0), (8, 0), (2, 3)])
def test_dicke_state_rejects_forbidden(S, M):
    with pytest.raises(ValueError):
        dicke_state(build_basis(6), S, M)


def test_pair_indices():
    b = build_basis(4)
    assert [tuple(b.states[i]) for i in pair_indices(b)] == [(0, 4, 0), (1, 2, 1), (2, 0, 2)]


def test_state_file_round_trip(tmp_path):
    b = build_basis(4)
    rng = np.random.default_rng(1)
    amps = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    psi = SpinStateVector(b, amps / np.linalg.norm(amps))
    path = tmp_path / "psi.csv"
    psi.to_file(path)
    assert path.read_text().splitlines()[0] == f"# N=4 order={ORDER_TAG}"
    back = SpinStateVector.from_file(path)
    np.testing.assert_array_equal(back.amplitudes, psi.amplitudes)
    assert back.normalized


def test_normalized_flag_is_checked():
    b = build_basis(2)
    with pytest.raises(ValueError):
        SpinStateVector(b, np.ones(b.dim))
    assert not SpinStateVector(b, np.ones(b.dim), normalized=False).normalized


def test_decomposition_error_type():
    assert issubclass(DecompositionError, RuntimeError)
