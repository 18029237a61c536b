"""Symmetric spin-1 ensembles in the occupation (Schwinger boson) representation.

A symmetric state of ``N`` spin-1 atoms is labelled by the occupations
``(n_-1, n_0, n_+1)`` of the three magnetic sublevels. Collective operators
are bilinears of three bosonic modes, e.g.

    S_+ = sqrt(2) (b_+1^dag b_0 + b_0^dag b_-1),    S_z = n_+1 - n_-1.

Basis order
-----------
States are listed in *descending* lexicographic order of ``(n_-1, n_0)``:
``(N,0,0), (N-1,1,0), (N-1,0,1), ..., (0,0,N)``. For ``N = 1`` this puts
``S_z`` on the diagonal as ``(-1, 0, +1)``. The order is tagged
``ORDER_TAG`` in serialized state files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

ORDER_TAG = "lexdesc(n-1,n0)"

OPERATOR_NAMES = ("Sx", "Sy", "Sz", "Splus", "Sminus", "S2", "Sperp2", "N0")


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpinEnsembleBasis:
    """Occupation basis ``|n_-1, n_0, n_+1>`` for ``N`` spin-1 atoms."""

    N: int
    states: np.ndarray = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def index(self, n_minus: int, n_zero: int, n_plus: int) -> int:
        if min(n_minus, n_zero, n_plus) < 0 or n_minus + n_zero + n_plus != self.N:
            raise KeyError((n_minus, n_zero, n_plus))
        return _index(self.N, n_minus, n_zero)

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.states)


def _index(N, n_minus, n_zero):
    # closed form of the descending lexicographic order
    r = N - n_minus
    return r * (r + 1) // 2 + (r - n_zero)


def build_basis(N: int) -> SpinEnsembleBasis:
    if int(N) != N or N < 1:
        raise ValueError(f"atom number must be a positive integer, got {N!r}")
    N = int(N)
    rows = [
        (nm, n0, N - nm - n0)
        for nm in range(N, -1, -1)
        for n0 in range(N - nm, -1, -1)
    ]
    states = np.array(rows, dtype=np.int64)
    states.setflags(write=False)
    return SpinEnsembleBasis(N, states)


@lru_cache(maxsize=16)
def _basis(N: int) -> SpinEnsembleBasis:
    return build_basis(N)


def _raising(N: int) -> sp.csr_matrix:
    st = _basis(N).states
    nm, n0, npl = st[:, 0], st[:, 1], st[:, 2]
    cols, rows, vals = [], [], []

    # b_+1^dag b_0
    m = n0 > 0
    cols.append(np.nonzero(m)[0])
    rows.append(_index(N, nm[m], n0[m] - 1))
    vals.append(np.sqrt(2.0 * n0[m] * (npl[m] + 1)))

    # b_0^dag b_-1
    m = nm > 0
    cols.append(np.nonzero(m)[0])
    rows.append(_index(N, nm[m] - 1, n0[m] + 1))
    vals.append(np.sqrt(2.0 * nm[m] * (n0[m] + 1)))

    dim = st.shape[0]
    op = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    return op.tocsr().astype(np.complex128)


def _freeze(op):
    op = sp.csr_matrix(op)
    op.sum_duplicates()
    op.eliminate_zeros()
    for arr in (op.data, op.indices, op.indptr):
        arr.setflags(write=False)
    return op


@lru_cache(maxsize=8)
def _operators(N: int) -> dict:
    st = _basis(N).states
    sp_ = _raising(N)
    sm = sp_.conj().T.tocsr()
    sz = sp.diags((st[:, 2] - st[:, 0]).astype(np.complex128), format="csr")
    n0 = sp.diags(st[:, 1].astype(np.complex128), format="csr")
    sx = 0.5 * (sp_ + sm)
    sy = -0.5j * (sp_ - sm)
    sperp2 = sx @ sx + sy @ sy
    ops = {
        "Splus": sp_,
        "Sminus": sm,
        "Sz": sz,
        "Sx": sx,
        "Sy": sy,
        "N0": n0,
        "Sperp2": sperp2,
        "S2": sperp2 + sz @ sz,
    }
    return {k: _freeze(v) for k, v in ops.items()}


def collective_operator(basis: SpinEnsembleBasis, which: str) -> sp.csr_matrix:
    """Collective operator ``which`` on ``basis`` as a read-only CSR matrix.

    ``which`` is one of ``Sx, Sy, Sz, Splus, Sminus, S2, Sperp2, N0``;
    ``Sperp2`` is ``Sx^2 + Sy^2``. Matrices are shared between callers and
    must not be modified in place.
    """
    if which not in OPERATOR_NAMES:
        raise ValueError(f"unknown operator {which!r}; expected one of {OPERATOR_NAMES}")
    return _operators(basis.N)[which]


@dataclass(frozen=True, eq=False)
class SpinStateVector:
    basis: SpinEnsembleBasis
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} amplitudes, got shape {amps.shape}")
        if self.normalized and abs(np.vdot(amps, amps).real - 1.0) > 1e-10:
            raise ValueError("amplitudes flagged normalized but norm differs from 1")
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def expect(self, op) -> complex:
        psi = self.amplitudes
        return np.vdot(psi, op @ psi) / np.vdot(psi, psi)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# N={self.basis.N} order={ORDER_TAG}\n")
            fh.write("n_minus,n_zero,n_plus,re,im\n")
            for (nm, n0, npl), a in zip(self.basis.states, self.amplitudes):
                fh.write(f"{nm},{n0},{npl},{float(a.real)!r},{float(a.imag)!r}\n")

    @classmethod
    def from_file(cls, path) -> "SpinStateVector":
        lines = Path(path).read_text().splitlines()
        header = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
        if header.get("order") != ORDER_TAG:
            raise ValueError(f"unsupported basis order {header.get('order')!r}")
        basis = _basis(int(header["N"]))
        amps = np.zeros(basis.dim, dtype=np.complex128)
        for line in lines[2:]:
            nm, n0, npl, re, im = line.split(",")
            amps[basis.index(int(nm), int(n0), int(npl))] = complex(float(re), float(im))
        nrm = np.vdot(amps, amps).real
        return cls(basis, amps, normalized=abs(nrm - 1.0) <= 1e-10)


def basis_state(basis: SpinEnsembleBasis, n_minus: int, n_zero: int, n_plus: int) -> SpinStateVector:
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[basis.index(n_minus, n_zero, n_plus)] = 1.0
    return SpinStateVector(basis, amps)


def pair_indices(basis: SpinEnsembleBasis) -> np.ndarray:
    """Indices of the pair states ``|k, N-2k, k>``, k = 0..N/2."""
    N = basis.N
    k = np.arange(N // 2 + 1)
    return _index(N, k, N - 2 * k)


def _require_even(N):
    if N % 2:
        raise ValueError(f"even N required (got N={N}); odd N has no spin-1 singlet")


def singlet_coefficients(N: int) -> np.ndarray:
    """Pair-basis amplitudes ``c_j`` of the spin singlet, j = 0..N/2."""
    _require_even(N)
    c = np.empty(N // 2 + 1)
    c[0] = 1.0 / np.sqrt(N + 1)
    for j in range(1, N // 2 + 1):
        c[j] = -np.sqrt((N - 2 * j + 2) / (N - 2 * j + 1)) * c[j - 1]
    return c


def singlet_vector(basis: SpinEnsembleBasis) -> SpinStateVector:
    _require_even(basis.N)
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[pair_indices(basis)] = singlet_coefficients(basis.N)
    amps /= np.linalg.norm(amps)
    return SpinStateVector(basis, amps)


@dataclass(frozen=True, eq=False)
class DickeComponent:
    k: int
    weight: float
    state: SpinStateVector

    @property
    def spin(self) -> int:
        return 2 * self.k


def _fix_phase(vec, ref):
    phase = vec[ref]
    if abs(phase) > 0:
        vec = vec * (abs(phase) / phase)
    return vec


def dicke_decomposition(basis: SpinEnsembleBasis) -> list[DickeComponent]:
    """Expand ``|0,N,0>`` in Dicke states ``|S=2k, S_z=0>``.

    ``S^2`` is projected onto the pair subspace (the ``S_z = 0`` sector) and
    diagonalized. Components come back sorted by ``k`` with eigenvector
    phases chosen so that the ``|0,N,0>`` amplitude is real and non-negative.
    """
    _require_even(basis.N)
    idx = pair_indices(basis)
    s2 = collective_operator(basis, "S2")
    restricted = s2[idx][:, idx].toarray()
    if np.abs(restricted.imag).max() > 1e-9:
        raise DecompositionError("restricted S^2 is not real")
    try:
        evals, evecs = scipy.linalg.eigh(restricted.real)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"eigen-decomposition of restricted S^2 failed for N={basis.N}") from exc
    order = np.argsort(evals)
    evals, evecs = evals[order], evecs[:, order]
    expected = np.array([2 * k * (2 * k + 1) for k in range(len(idx))], dtype=float)
    worst = np.max(np.abs(evals - expected) / np.maximum(1.0, expected))
    if worst > 1e-8:
        raise DecompositionError(f"restricted S^2 spectrum deviates from 2k(2k+1) by {worst:.3g}")

    out = []
    for k in range(len(idx)):
        vec = _fix_phase(evecs[:, k].astype(np.complex128), 0)
        full = np.zeros(basis.dim, dtype=np.complex128)
        full[idx] = vec
        out.append(DickeComponent(k, float(abs(vec[0]) ** 2), SpinStateVector(basis, full)))
    return out


def dicke_state(basis: SpinEnsembleBasis, S: int, M: int) -> SpinStateVector:
    """Symmetric Dicke state ``|S, M>``.

    Found by diagonalizing ``S^2`` on the ``S_z = M`` sector; every allowed
    ``S`` (``S = N, N-2, ...``) occurs once in the symmetric subspace. The
    phase makes the largest-magnitude amplitude real and positive.
    """
    N = basis.N
    if not (0 <= S <= N and (N - S) % 2 == 0 and abs(M) <= S):
        raise ValueError(f"no symmetric Dicke state |S={S}, M={M}> for N={N}")
    sz = basis.states[:, 2] - basis.states[:, 0]
    idx = np.nonzero(sz == M)[0]
    block = collective_operator(basis, "S2")[idx][:, idx].toarray().real
    evals, evecs = np.linalg.eigh(block)
    target = S * (S + 1)
    j = int(np.argmin(np.abs(evals - target)))
    if abs(evals[j] - target) > 1e-8 * max(1.0, target):
        raise DecompositionError(f"S^2 eigenvalue {target} not found in sector M={M}")
    vec = evecs[:, j].astype(np.complex128)
    vec = _fix_phase(vec, int(np.argmax(np.abs(vec))))
    full = np.zeros(basis.dim, dtype=np.complex128)
    full[idx] = vec
    return SpinStateVector(basis, full)
