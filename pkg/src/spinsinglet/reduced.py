"""No-jump spinor dynamics restricted to the pair basis ``|k, N-2k, k>``.

Before any collective-decay photon is emitted the state stays in the
``S_z = 0`` sector, which for a symmetric ensemble is spanned by the
``N/2 + 1`` pair states. There ``S_+ S_- = Sx^2 + Sy^2`` is real symmetric
tridiagonal in ``k`` and ``N0`` is diagonal, so a step of the non-Hermitian
Hamiltonian

    H(t) = ((Lambda - i Gamma)/N)(Sx^2 + Sy^2) - q(t) Lambda N0

costs O(N). Everything here is in units of ``|Lambda|``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
import scipy.sparse as sp

from spinsinglet.collective import singlet_coefficients
from spinsinglet.models import SpinorModelParams, SweepSchedule


class NumericalError(RuntimeError):
    """Integration failed a self-consistency check."""


@dataclass(frozen=True, eq=False)
class ReducedOperators:
    """Pair-basis ``Sx^2 + Sy^2`` (tridiagonal) and ``N0`` (diagonal)."""

    N: int
    diag: np.ndarray
    offdiag: np.ndarray
    n0: np.ndarray

    @property
    def dim(self) -> int:
        return self.diag.shape[0]

    def sperp2_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def sperp2_csr(self) -> sp.csr_matrix:
        return sp.diags(
            [self.offdiag, self.diag, self.offdiag], [-1, 0, 1], format="csr", dtype=np.complex128
        )


@lru_cache(maxsize=32)
def reduced_operators(N: int) -> ReducedOperators:
    if N % 2 or N < 2:
        raise ValueError(f"even N >= 2 required (got N={N})")
    k = np.arange(N // 2 + 1, dtype=float)
    n0 = N - 2 * k
    # S+S- = 2(b+^dag b0 + b0^dag b-)(b0^dag b+ + b-^dag b0) on |k, N-2k, k>
    diag = 2 * (k * (n0 + 1) + n0 * (k + 1))
    off = 2 * (k[:-1] + 1) * np.sqrt(n0[:-1] * (n0[:-1] - 1))
    for arr in (diag, off, n0):
        arr.setflags(write=False)
    return ReducedOperators(N, diag, off, n0)


@numba.njit(cache=True, nogil=True)
def _q(kind, q0, xi, tmax, t):
    if kind == 1:
        return q0 * math.exp(-xi * t)
    if kind == 2:
        return q0 * max(0.0, 1.0 - t / tmax)
    if kind == 3:
        return q0 / (1.0 + xi * t)
    return q0


@numba.njit(cache=True, nogil=True)
def _deriv(diag, off, c, qk, x, y):
    # y = -i H' x with H' = c M + 2 q k (N0 - N shifted out)
    n = x.shape[0]
    for i in range(n):
        s = (c * diag[i] + qk * 2.0 * i) * x[i]
        if i > 0:
            s += c * off[i - 1] * x[i - 1]
        if i < n - 1:
            s += c * off[i] * x[i + 1]
        y[i] = -1j * s


@numba.njit(cache=True, nogil=True)
def _sperp2_expect(diag, off, x):
    n = x.shape[0]
    num = 0.0
    den = 0.0
    for i in range(n):
        v = diag[i] * x[i]
        if i > 0:
            v += off[i - 1] * x[i - 1]
        if i < n - 1:
            v += off[i] * x[i + 1]
        num += (x[i].conjugate() * v).real
        den += (x[i].conjugate() * x[i]).real
    return num / den


@numba.njit(cache=True, nogil=True)
def _propagate(psi, diag, off, c, sign, kind, q0, xi, tmax, dt, nsteps, sample_every, rate, samples):
    """RK4 over ``nsteps``; returns accumulated log of the product formula."""
    n = psi.shape[0]
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    logprod = 0.0
    for s in range(nsteps):
        if s % sample_every == 0:
            samples[s // sample_every, :] = psi
        t = s * dt
        factor = 1.0 - rate * _sperp2_expect(diag, off, psi) * dt
        if factor <= 0.0:
            return -np.inf
        logprod += math.log(factor)
        # -q N0 = -q N + 2 q k; the -qN part is a global phase restored by the caller
        qa = sign * _q(kind, q0, xi, tmax, t)
        qb = sign * _q(kind, q0, xi, tmax, t + 0.5 * dt)
        qc = sign * _q(kind, q0, xi, tmax, t + dt)
        _deriv(diag, off, c, qa, psi, k1)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k1[i]
        _deriv(diag, off, c, qb, tmp, k2)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k2[i]
        _deriv(diag, off, c, qb, tmp, k3)
        for i in range(n):
            tmp[i] = psi[i] + dt * k3[i]
        _deriv(diag, off, c, qc, tmp, k4)
        for i in range(n):
            psi[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    samples[nsteps // sample_every, :] = psi
    return logprod


def stability_limit(N: int, q_max: float) -> float:
    """Largest RK4 step for which every mode of the shifted generator is stable.

    Gershgorin bound on the real part (``M/N`` plus ``2 q k``) against the
    RK4 stability interval on the imaginary axis, 2*sqrt(2).
    """
    ops = reduced_operators(N)
    rows = ops.diag.copy()
    rows[:-1] += ops.offdiag
    rows[1:] += ops.offdiag
    bound = np.max(rows / N + 2 * abs(q_max) * np.arange(ops.dim))
    return 2.0 * math.sqrt(2.0) / bound


@dataclass(frozen=True, eq=False)
class NoJumpResult:
    """Pair-basis amplitudes at sample times and the no-photon probability.

    ``amplitudes`` are unnormalized; their squared norm is the probability
    of no emission up to that time. ``p_s_product`` is the discrete product
    of ``1 - (2 Gamma/N) <Sx^2 + Sy^2> dt`` on the normalized state.
    """

    N: int
    times: np.ndarray
    amplitudes: np.ndarray = field(repr=False)
    p_s_norm: float
    p_s_product: float
    dt: float

    @property
    def final(self) -> np.ndarray:
        return self.amplitudes[-1]

    def singlet_overlap(self) -> np.ndarray:
        c = singlet_coefficients(self.N)
        amp = self.amplitudes @ c
        return np.abs(amp) ** 2 / np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def sperp2(self) -> np.ndarray:
        ops = reduced_operators(self.N)
        M = ops.sperp2_dense()
        a = self.amplitudes
        return np.real(np.einsum("ti,ij,tj->t", a.conj(), M, a)) / np.sum(np.abs(a) ** 2, axis=1)


def propagate_no_jump(
    N: int,
    p: SpinorModelParams,
    sched: SweepSchedule,
    dt: float,
    t_max: float | None = None,
    sample_interval: float | None = None,
    rtol: float = 1e-3,
) -> NoJumpResult:
    """Evolve ``|k=0>`` (all atoms in m=0) under the no-jump Hamiltonian.

    Raises :class:`NumericalError` when the norm and product estimates of
    the no-photon probability differ by more than ``rtol`` (relative), and
    ``ValueError`` when ``dt`` exceeds the RK4 stability limit.
    """
    if p.N != N:
        raise ValueError(f"parameters are for N={p.N}, requested N={N}")
    u = p.in_lambda_units()
    t_max = sched.t_max if t_max is None else t_max
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    nsteps = int(round(t_max / dt))
    if abs(nsteps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max} is not a multiple of dt={dt}")
    sample_interval = t_max if sample_interval is None else sample_interval
    every = int(round(sample_interval / dt))
    if every < 1 or nsteps % every:
        raise ValueError("sample_interval must be a positive multiple of dt dividing t_max")
    q_max = float(np.max(np.abs(sched(np.array([0.0, t_max])))))
    limit = stability_limit(N, q_max)
    if dt > limit:
        raise ValueError(f"dt={dt} exceeds the RK4 stability limit {limit:.3g} for N={N}, q0={sched.q0}")

    ops = reduced_operators(N)
    psi = np.zeros(ops.dim, dtype=np.complex128)
    psi[0] = 1.0
    samples = np.empty((nsteps // every + 1, ops.dim), dtype=np.complex128)
    c = (u.Lambda - 1j * u.Gamma) / N
    logprod = _propagate(
        psi, ops.diag, ops.offdiag, c, u.Lambda, sched.code, sched.q0, sched.xi, sched.t_max,
        dt, nsteps, every, 2.0 * u.Gamma / N, samples,
    )
    times = np.arange(samples.shape[0]) * every * dt
    # restore the global phase exp(+i Lambda N int q) removed by the shift
    samples *= np.exp(1j * u.Lambda * N * sched.integral(times))[:, None]

    p_norm = float(np.vdot(samples[-1], samples[-1]).real)
    p_prod = float(np.exp(logprod))
    if u.Gamma == 0:
        # no channel, so no emission is certain; the norm only measures RK4 drift
        if abs(p_norm - 1.0) > rtol:
            raise NumericalError(f"lossless norm drifted to {p_norm:.9g}; reduce dt")
        p_norm = 1.0
    if p_norm > 1 + 1e-9:
        raise NumericalError(f"norm grew to {p_norm} during no-jump evolution")
    if abs(p_norm - p_prod) > rtol * max(p_norm, 1e-300):
        raise NumericalError(
            f"no-photon probability disagrees: norm^2={p_norm:.6g}, product={p_prod:.6g}; reduce dt"
        )
    return NoJumpResult(N, times, samples, p_norm, p_prod, dt)


def singlet_overlap_pair(amplitudes) -> float:
    amplitudes = np.asarray(amplitudes)
    N = 2 * (amplitudes.shape[0] - 1)
    c = singlet_coefficients(N)
    return float(abs(np.vdot(c, amplitudes)) ** 2 / np.vdot(amplitudes, amplitudes).real)


@dataclass(frozen=True)
class ScanPoint:
    q0: float
    xi: float
    gamma_over_lambda: float
    N: int
    p_s: float = float("nan")
    overlap: float = float("nan")
    p: float = float("nan")
    dt: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True, eq=False)
class ScanResult:
    points: tuple[ScanPoint, ...]

    CSV_COLUMNS = ("q0", "xi", "Gamma_over_Lambda", "N", "p_s", "overlap", "p")

    @property
    def n_failed(self) -> int:
        return sum(not pt.ok for pt in self.points)

    def best(self) -> ScanPoint:
        good = [pt for pt in self.points if pt.ok]
        if not good:
            raise ValueError("no successful scan points")
        return max(good, key=lambda pt: pt.p)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for pt in self.points:
                w.writerow([repr(float(pt.q0)), repr(float(pt.xi)), repr(float(pt.gamma_over_lambda)), pt.N,
                            repr(float(pt.p_s)), repr(float(pt.overlap)), repr(float(pt.p))])


def default_q0_grid() -> np.ndarray:
    return np.geomspace(0.5, 20.0, 12)


def default_xi_grid() -> np.ndarray:
    return np.geomspace(0.01, 0.3, 12)


def _scan_point(N, gamma_over_lambda, kind, q0, xi, t_max, dt, rtol):
    p = SpinorModelParams(1.0, gamma_over_lambda, 0.0, N)
    sched = SweepSchedule(kind, q0, xi, t_max)
    # never exceed the stability limit; keep dt an exact divisor of t_max
    step = min(dt, 0.9 * stability_limit(N, q0))
    nsteps = math.ceil(t_max / step)
    step = t_max / nsteps
    try:
        res = propagate_no_jump(N, p, sched, step, t_max, rtol=rtol)
    except (NumericalError, ValueError) as exc:
        return ScanPoint(q0, xi, gamma_over_lambda, N, dt=step, error=str(exc))
    ov = singlet_overlap_pair(res.final)
    return ScanPoint(q0, xi, gamma_over_lambda, N, res.p_s_norm, ov, res.p_s_norm * ov, step)


def scan_sweep(
    N: int,
    gamma_over_lambda: float,
    q0_grid=None,
    xi_grid=None,
    t_max: float = 200.0,
    kind: str = "exponential",
    dt: float = 1e-3,
    threads: int = 1,
    rtol: float = 1e-3,
) -> ScanResult:
    """Total heralding efficiency ``p = p_s * overlap`` over a ``(q0, xi)`` grid.

    Each point runs with ``min(dt, 0.9 * stability limit)``, rounded down to
    divide ``t_max``. Failed points carry an error string instead of numbers.
    """
    q0_grid = default_q0_grid() if q0_grid is None else np.atleast_1d(q0_grid)
    xi_grid = default_xi_grid() if xi_grid is None else np.atleast_1d(xi_grid)
    if len(q0_grid) == 0 or len(xi_grid) == 0:
        raise ValueError("scan grid is empty")
    jobs = [(float(q0), float(xi)) for q0 in q0_grid for xi in xi_grid]

    def run(job):
        return _scan_point(N, gamma_over_lambda, kind, job[0], job[1], t_max, dt, rtol)

    if threads == 1:
        points = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            points = list(pool.map(run, jobs))
    return ScanResult(tuple(points))
