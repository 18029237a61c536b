"""Observables, the collective entanglement witness and protocol arithmetic."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from spinsinglet.collective import DickeComponent, build_basis, dicke_decomposition
from spinsinglet.models import EffectiveDickeParams, HilbertSpace


class RegimeWarning(UserWarning):
    pass


def spin_length(S2):
    """Solve ``S(S+1) = S2`` for ``S >= 0``."""
    arr = np.asarray(S2, dtype=float)
    if np.any(arr < 0):
        raise ValueError("S^2 expectation must be non-negative")
    out = 0.5 * (np.sqrt(1.0 + 4.0 * arr) - 1.0)
    return out if out.ndim else float(out)


def _to_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


@dataclass(frozen=True)
class EntanglementReport:
    """Second moments of the collective spin and the witness ``<S^2> < N``.

    ``unentangled_bound`` is a placeholder, ``floor(<S^2>/2)``, kept under
    ``bound_label`` so it is never mistaken for a derived inequality.
    """

    N: int
    Sx2: float
    Sy2: float
    Sz2: float
    S2: float
    margin: float
    unentangled_bound: int
    bound_label: str = "placeholder: floor(<S^2>/2)"

    @property
    def entangled(self) -> bool:
        return self.margin > 0

    def to_json(self, path=None) -> str:
        return _to_json({**asdict(self), "entangled": self.entangled}, path)


def _spin_ops(space: HilbertSpace):
    return [space.spin_operator(w) for w in ("Sx", "Sy", "Sz")]


def _expect(op, state) -> float:
    if state.ndim == 1:
        return float(np.vdot(state, op @ state).real / np.vdot(state, state).real)
    dense = op.toarray() if sp.issparse(op) else op
    return float(np.real(np.einsum("ij,ji->", dense, state)) / np.trace(state).real)


def entanglement_witness(state, space: HilbertSpace | None = None) -> EntanglementReport:
    """Evaluate the witness on a state vector or density matrix.

    ``state`` may be a :class:`SpinStateVector`, a
    :class:`~spinsinglet.trajectories.DensityMatrix`, or a raw array on
    ``space`` (spin-only or spin (x) cavity). Pair-basis states are not
    supported because ``Sx`` and ``Sy`` leave that subspace.
    """
    if hasattr(state, "basis"):
        space = HilbertSpace("spin", state.basis.N)
        arr = state.amplitudes
    elif hasattr(state, "matrix"):
        space = state.space
        arr = state.matrix
    else:
        if space is None:
            raise ValueError("a raw array needs its HilbertSpace")
        arr = np.asarray(state, dtype=np.complex128)
    if space.kind == "pair":
        raise ValueError("entanglement witness needs the full symmetric space, not the pair basis")
    sx, sy, sz = _spin_ops(space)
    m = [_expect((op @ op).tocsr(), arr) for op in (sx, sy, sz)]
    s2 = sum(m)
    return EntanglementReport(
        N=space.N,
        Sx2=m[0],
        Sy2=m[1],
        Sz2=m[2],
        S2=s2,
        margin=space.N - s2,
        unentangled_bound=int(math.floor(max(s2, 0.0) / 2 + 1e-12)),
    )


@dataclass(frozen=True)
class HeraldReport:
    N: int
    eta: float
    fidelity: float
    weights: tuple = field(repr=False)

    def to_json(self, path=None) -> str:
        return _to_json(asdict(self), path)


def heralded_fidelity(N: int, eta: float, decomposition: list[DickeComponent] | None = None) -> HeraldReport:
    """Singlet fidelity after heralding on zero detected photons.

    Detector efficiency ``eta`` leaves component ``k`` with weight
    ``(1 - eta)^(2k) |d_k|^2``; the fidelity is the normalized ``k = 0``
    weight.
    """
    if not 0 <= eta <= 1:
        raise ValueError("detection efficiency must lie in [0, 1]")
    if decomposition is None:
        decomposition = dicke_decomposition(build_basis(N))
    if len(decomposition) != N // 2 + 1:
        raise ValueError("decomposition does not match N")
    w = np.array([(1.0 - eta) ** (2 * c.k) * c.weight for c in decomposition])
    return HeraldReport(N, float(eta), float(w[0] / w.sum()), tuple(float(x) for x in w))


def _even_histogram(S):
    # unit-width bins centred on even S; values between bins are dropped
    half = np.round(S / 2).astype(int)
    inside = np.abs(S - 2 * half) <= 0.5
    counts = np.bincount(half[inside], minlength=int(half.max(initial=0)) + 1)
    return 2.0 * np.arange(len(counts)), counts


@dataclass(frozen=True, eq=False)
class Partition:
    count: int
    mean_S2: float
    mean_overlap: float
    S2_bins: np.ndarray
    S2_counts: np.ndarray
    overlaps: np.ndarray

    def modal_S2(self) -> float:
        if not self.count:
            return float("nan")
        return float(self.S2_bins[np.argmax(self.S2_counts)])


@dataclass(frozen=True, eq=False)
class JumpSplit:
    n_traj: int
    no_jump: Partition
    with_jumps: Partition
    spin_bins: np.ndarray
    spin_counts: np.ndarray

    @property
    def no_jump_fraction(self) -> float:
        return self.no_jump.count / self.n_traj

    def histogram_csv(self, path) -> None:
        write_histogram_csv(self.spin_bins, self.spin_counts, path)

    def to_json(self, path=None) -> str:
        part = lambda p: {"count": p.count, "mean_S2": p.mean_S2, "mean_overlap": p.mean_overlap,
                          "modal_S2": p.modal_S2()}
        return _to_json({
            "n_traj": self.n_traj,
            "no_jump_fraction": self.no_jump_fraction,
            "no_jump": part(self.no_jump),
            "with_jumps": part(self.with_jumps),
        }, path)


def _partition(records) -> Partition:
    S2 = np.array([r.final_S2 for r in records])
    ov = np.array([r.final_overlap for r in records])
    if len(S2):
        # S^2 bins centred on S(S+1) for even S
        S = spin_length(np.clip(S2, 0, None))
        centers, counts = _even_histogram(np.atleast_1d(S))
        bins = centers * (centers + 1)
    else:
        bins, counts = np.zeros(0), np.zeros(0, dtype=int)
    mean = lambda a: float(a.mean()) if len(a) else float("nan")
    return Partition(len(records), mean(S2), mean(ov), bins, counts, ov)


def split_by_jumps(records) -> JumpSplit:
    """Separate an ensemble into trajectories with and without jumps.

    Final spin lengths are histogrammed in unit-width bins centred on the
    even values ``S = 0, 2, 4, ...`` reachable from ``|0,N,0>``.
    """
    records = [r for r in records if r.valid]
    if not records:
        raise ValueError("no valid trajectories to split")
    quiet = [r for r in records if r.n_jumps == 0]
    loud = [r for r in records if r.n_jumps > 0]
    S = spin_length(np.clip([r.final_S2 for r in records], 0, None))
    bins, counts = _even_histogram(np.atleast_1d(S))
    return JumpSplit(len(records), _partition(quiet), _partition(loud), bins, counts)


def write_histogram_csv(centers, counts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "count"])
        for c, n in zip(centers, counts):
            w.writerow([repr(float(c)), int(n)])


@dataclass(frozen=True)
class RegimeReport:
    ratio: float
    threshold: float
    ok: bool
    message: str

    def to_json(self, path=None) -> str:
        return _to_json(asdict(self), path)


def regime_check(d: EffectiveDickeParams, threshold: float = 5.0, warn: bool = True) -> RegimeReport:
    """Compare ``lambda_- sqrt(3/N)`` with ``kappa``; fast projection needs the ratio large."""
    ratio = math.inf if d.kappa == 0 else abs(d.lambda_minus) * math.sqrt(3.0 / d.N) / d.kappa
    ok = ratio >= threshold
    msg = f"lambda_- sqrt(3/N) / kappa = {ratio:.3g}"
    if not ok:
        msg += f" < {threshold:g}: projection is slower than 1/kappa"
        if warn:
            warnings.warn(msg, RegimeWarning, stacklevel=2)
    return RegimeReport(ratio, threshold, ok, msg)


def protocol_efficiency(p_s: float, overlap: float, repetitions: int = 1) -> float:
    """Success probability ``1 - (1 - p_s * overlap)^repetitions``."""
    if not (0 <= p_s <= 1 and 0 <= overlap <= 1):
        raise ValueError("p_s and overlap must lie in [0, 1]")
    if int(repetitions) != repetitions or repetitions < 1:
        raise ValueError("repetitions must be a positive integer")
    p = p_s * overlap
    return float(-np.expm1(repetitions * np.log1p(-p))) if p < 1 else 1.0
