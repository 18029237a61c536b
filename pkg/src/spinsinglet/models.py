"""Effective cavity-QED models for spin-1 ensembles.

Parameter maps from the microscopic Raman scheme to the open Dicke model and
on to the dispersive spinor model, plus builders that assemble Hamiltonian
terms and jump channels for the trajectory engine.

Master-equation convention: a channel ``(c, rate)`` stands for
``rate * (2 c rho c^dag - rho c^dag c - c^dag c rho)``. The stochastic jump
operator is therefore ``sqrt(2 rate) c`` and the no-jump drift is
``-i rate c^dag c``.

Engine-facing units are dimensionless: Dicke-type models are expressed in
units of ``kappa`` and spinor models in units of ``|Lambda|``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from spinsinglet.collective import (
    SpinEnsembleBasis,
    build_basis,
    collective_operator,
    pair_indices,
    singlet_coefficients,
)

VARIANTS = ("dicke", "tavis_cummings", "spinor", "reduced")
SCHEDULE_KINDS = ("constant", "exponential", "linear", "reciprocal")


class DispersiveRegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MicroscopicParams:
    """Raman-scheme parameters (angular frequencies)."""

    g: float
    Omega_minus: float
    Omega_plus: float
    Delta: float
    omega_c: float
    omega_minus: float
    omega_plus: float
    omega_z: float
    kappa: float
    N: int

    def __post_init__(self):
        if self.Delta == 0:
            raise ValueError("atomic detuning Delta must be nonzero")
        if self.kappa <= 0:
            raise ValueError("cavity decay rate kappa must be positive")
        if self.N < 1:
            raise ValueError("N must be at least 1")


@dataclass(frozen=True)
class EffectiveDickeParams:
    omega: float
    omega0: float
    lambda_minus: float
    lambda_plus: float
    kappa: float
    N: int

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("cavity decay rate kappa must be positive")

    def in_kappa_units(self) -> "EffectiveDickeParams":
        k = self.kappa
        return EffectiveDickeParams(
            self.omega / k, self.omega0 / k, self.lambda_minus / k, self.lambda_plus / k, 1.0, self.N
        )


@dataclass(frozen=True)
class SpinorModelParams:
    Lambda: float
    Gamma: float
    omega0_prime: float
    N: int

    def __post_init__(self):
        if self.Gamma < 0:
            raise ValueError("collective decay rate Gamma must be non-negative")

    def in_lambda_units(self) -> "SpinorModelParams":
        """Rescale by ``|Lambda|``; the sign of Lambda survives as +-1."""
        if self.Lambda == 0:
            raise ValueError("Lambda = 0 sets no interaction scale")
        s = abs(self.Lambda)
        return SpinorModelParams(math.copysign(1.0, self.Lambda), self.Gamma / s, self.omega0_prime / s, self.N)


def effective_dicke_params(mu: MicroscopicParams) -> EffectiveDickeParams:
    N, g, D = mu.N, mu.g, mu.Delta
    omega = mu.omega_c - 0.5 * (mu.omega_minus + mu.omega_plus) + N * g**2 / (3 * D)
    omega0 = mu.omega_z - 0.5 * (mu.omega_minus - mu.omega_plus) + (mu.Omega_plus**2 - mu.Omega_minus**2) / (24 * D)
    lam_m = math.sqrt(N) * g * mu.Omega_minus / (12 * D)
    lam_p = math.sqrt(N) * g * mu.Omega_plus / (12 * D)
    return EffectiveDickeParams(omega, omega0, lam_m, lam_p, mu.kappa, N)


def spinor_params(d: EffectiveDickeParams) -> SpinorModelParams:
    """Adiabatically eliminate the cavity (``lambda_+ = 0`` branch).

    Warns with :class:`DispersiveRegimeWarning` when ``|omega|`` is less than
    ten times ``max(|omega0|, lambda_-)``.
    """
    w, k, lam = d.omega, d.kappa, d.lambda_minus
    if w == 0:
        raise ValueError("omega = 0: the cavity cannot be adiabatically eliminated")
    if abs(w) < 10 * max(abs(d.omega0), abs(lam)):
        warnings.warn(
            f"|omega|={abs(w):.3g} is not large against omega0={d.omega0:.3g}, lambda_-={lam:.3g}",
            DispersiveRegimeWarning,
            stacklevel=2,
        )
    Lambda = -w * lam**2 / (2 * (w**2 + k**2))
    Gamma = k * lam**2 / (2 * (w**2 + k**2))
    return SpinorModelParams(Lambda, Gamma, d.omega0 + Lambda / d.N, d.N)


@dataclass(frozen=True)
class SweepSchedule:
    """Quadratic Zeeman shift ``q(t)`` in units of Lambda, time in 1/Lambda.

    ``exponential``: q0 exp(-xi t); ``linear``: q0 (1 - t/t_max) clipped at 0;
    ``reciprocal``: q0 / (1 + xi t); ``constant``: q0.
    """

    kind: str
    q0: float
    xi: float = 0.0
    t_max: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.kind in ("exponential", "reciprocal") and self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.kind == "linear" and self.t_max <= 0:
            raise ValueError("linear schedule needs t_max > 0")

    @property
    def code(self) -> int:
        return SCHEDULE_KINDS.index(self.kind)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            out = self.q0 * np.exp(-self.xi * t)
        elif self.kind == "linear":
            out = self.q0 * np.clip(1.0 - t / self.t_max, 0.0, None)
        elif self.kind == "reciprocal":
            out = self.q0 / (1.0 + self.xi * t)
        else:
            out = np.full_like(t, self.q0)
        return out if out.ndim else float(out)

    def integral(self, t):
        """``int_0^t q(s) ds`` in closed form."""
        t = np.asarray(t, dtype=float)
        q0, xi = self.q0, self.xi
        if self.kind == "exponential":
            out = q0 * t if xi == 0 else q0 * -np.expm1(-xi * t) / xi
        elif self.kind == "linear":
            tc = np.minimum(t, self.t_max)
            out = q0 * (tc - tc**2 / (2 * self.t_max))
        elif self.kind == "reciprocal":
            out = q0 * t if xi == 0 else q0 * np.log1p(xi * t) / xi
        else:
            out = q0 * t
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CavitySpace:
    n_max: int
    monitor_threshold: float = 1e-6

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("photon truncation n_max must be at least 1")

    @property
    def dim(self) -> int:
        return self.n_max + 1

    def annihilation(self) -> sp.csr_matrix:
        n = np.arange(1, self.n_max + 1)
        return sp.diags(np.sqrt(n).astype(np.complex128), 1, format="csr")

    @classmethod
    def default(cls, N: int) -> "CavitySpace":
        return cls(max(2 * N, 20))


@dataclass(frozen=True)
class HilbertSpace:
    """Where a model lives: ``spin``, ``spin_cavity`` (spin-major) or ``pair``."""

    kind: str
    N: int
    n_max: int = 0

    @property
    def spin_dim(self) -> int:
        if self.kind == "pair":
            return self.N // 2 + 1
        return (self.N + 1) * (self.N + 2) // 2

    @property
    def cavity_dim(self) -> int:
        return self.n_max + 1 if self.kind == "spin_cavity" else 1

    @property
    def dim(self) -> int:
        return self.spin_dim * self.cavity_dim

    def lift(self, spin_op) -> sp.csr_matrix:
        """Embed a spin-space operator into this space."""
        if self.kind == "spin_cavity":
            return sp.kron(spin_op, sp.identity(self.cavity_dim, dtype=np.complex128), format="csr")
        return sp.csr_matrix(spin_op)

    def spin_operator(self, which: str) -> sp.csr_matrix:
        if self.kind == "pair":
            from spinsinglet.reduced import reduced_operators

            ops = reduced_operators(self.N)
            if which in ("S2", "Sperp2"):
                return ops.sperp2_csr()
            if which == "N0":
                return sp.diags(ops.n0.astype(np.complex128), format="csr")
            if which == "Sz":
                return sp.csr_matrix((self.dim, self.dim), dtype=np.complex128)
            raise ValueError(f"{which} leaves the pair subspace")
        return self.lift(collective_operator(build_basis(self.N), which))

    def singlet(self) -> np.ndarray | None:
        """Singlet amplitudes on the spin factor, or None for odd N."""
        if self.N % 2:
            return None
        c = singlet_coefficients(self.N).astype(np.complex128)
        if self.kind == "pair":
            return c / np.linalg.norm(c)
        out = np.zeros(self.spin_dim, dtype=np.complex128)
        out[pair_indices(build_basis(self.N))] = c
        return out / np.linalg.norm(out)

    def with_vacuum(self, spin_amplitudes) -> np.ndarray:
        """``spin state (x) |n=0>`` as a vector on this space."""
        spin_amplitudes = np.asarray(spin_amplitudes, dtype=np.complex128)
        if self.kind != "spin_cavity":
            return spin_amplitudes.copy()
        out = np.zeros((self.spin_dim, self.cavity_dim), dtype=np.complex128)
        out[:, 0] = spin_amplitudes
        return out.ravel()


@dataclass(frozen=True)
class HamiltonianTerm:
    """``scale * f(t) * operator`` with ``f = schedule`` or 1.

    ``offset`` is a gauge choice used only by the stochastic integrator: it
    propagates ``operator - offset * 1`` and restores the resulting global
    phase afterwards. It keeps large diagonal terms such as ``q N0`` from
    costing RK4 accuracy on the populated states.
    """

    operator: sp.csr_matrix = field(repr=False)
    scale: complex = 1.0
    schedule: SweepSchedule | None = None
    offset: float = 0.0
    label: str = ""

    def coefficient(self, t: float) -> complex:
        f = 1.0 if self.schedule is None else self.schedule(t)
        return self.scale * f

    def phase_integral(self, t: float) -> complex:
        """``offset * int_0^t coefficient``."""
        if self.offset == 0:
            return 0.0
        f = t if self.schedule is None else self.schedule.integral(t)
        return self.offset * self.scale * f


@dataclass(frozen=True)
class JumpChannel:
    operator: sp.csr_matrix = field(repr=False)
    rate: float
    label: str = ""

    def jump_operator(self) -> sp.csr_matrix:
        return np.sqrt(2.0 * self.rate) * self.operator


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    variant: str
    space: HilbertSpace
    terms: tuple[HamiltonianTerm, ...]
    channels: tuple[JumpChannel, ...] = ()
    params: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for term in self.terms:
            if term.operator.shape != (self.space.dim, self.space.dim):
                raise ValueError(f"term {term.label!r} has shape {term.operator.shape}, space dim {self.space.dim}")
        for ch in self.channels:
            if ch.operator.shape != (self.space.dim, self.space.dim):
                raise ValueError(f"channel {ch.label!r} does not match the space dimension")
            if ch.rate < 0:
                raise ValueError("channel rates must be non-negative")

    @property
    def dim(self) -> int:
        return self.space.dim

    def hamiltonian(self, t: float = 0.0) -> sp.csr_matrix:
        """``H(t)`` exactly as written, without integrator offsets."""
        H = sp.csr_matrix((self.dim, self.dim), dtype=np.complex128)
        for term in self.terms:
            H = H + term.coefficient(t) * term.operator
        return H

    def drift(self) -> sp.csr_matrix:
        D = sp.csr_matrix((self.dim, self.dim), dtype=np.complex128)
        for ch in self.channels:
            D = D + ch.rate * (ch.operator.conj().T @ ch.operator)
        return D

    def effective_hamiltonian(self, t: float = 0.0) -> sp.csr_matrix:
        return (self.hamiltonian(t) - 1j * self.drift()).tocsr()

    def describe(self) -> dict:
        return {
            "variant": self.variant,
            "space": asdict(self.space),
            "params": dict(self.params),
            "terms": [t.label for t in self.terms],
            "channels": [(c.label, c.rate) for c in self.channels],
        }


def build_dicke_model(d: EffectiveDickeParams, basis: SpinEnsembleBasis, cavity: CavitySpace) -> EffectiveModel:
    """Open Dicke model on spin (x) cavity; Tavis-Cummings when ``lambda_+ = 0``."""
    if d.N != basis.N:
        raise ValueError(f"parameters are for N={d.N}, basis has N={basis.N}")
    space = HilbertSpace("spin_cavity", basis.N, cavity.n_max)
    id_s = sp.identity(basis.dim, dtype=np.complex128, format="csr")
    a_c = cavity.annihilation()
    a = sp.kron(id_s, a_c, format="csr")
    ad = a.conj().T.tocsr()
    Sp = space.spin_operator("Splus")
    Sm = space.spin_operator("Sminus")
    Sz = space.spin_operator("Sz")
    photons = (ad @ a).tocsr()
    g = 1.0 / math.sqrt(2 * d.N)

    terms = []
    if d.omega:
        terms.append(HamiltonianTerm(photons, d.omega, label="omega a^dag a"))
    if d.omega0:
        terms.append(HamiltonianTerm(Sz, d.omega0, label="omega0 Sz"))
    if d.lambda_minus:
        terms.append(HamiltonianTerm((a @ Sp + ad @ Sm).tocsr(), d.lambda_minus * g, label="lambda_- (a S+ + a^dag S-)"))
    if d.lambda_plus:
        terms.append(HamiltonianTerm((a @ Sm + ad @ Sp).tocsr(), d.lambda_plus * g, label="lambda_+ (a S- + a^dag S+)"))
    if not terms:
        terms.append(HamiltonianTerm(sp.csr_matrix((space.dim, space.dim), dtype=np.complex128), 0.0, label="zero"))

    return EffectiveModel(
        variant="tavis_cummings" if d.lambda_plus == 0 else "dicke",
        space=space,
        terms=tuple(terms),
        channels=(JumpChannel(a, d.kappa, label="cavity output"),),
        params={**asdict(d), "n_max": cavity.n_max, "truncation_threshold": cavity.monitor_threshold},
        observables={"photons": photons, "excitation": (photons + Sz).tocsr()},
    )


def build_spinor_model(p: SpinorModelParams, sched: SweepSchedule, basis: SpinEnsembleBasis) -> EffectiveModel:
    """``H(t) = (Lambda/N)(Sx^2 + Sy^2) - q(t) Lambda N0`` with ``(Gamma/N) D[S-]``.

    Built in units of ``|Lambda|``: engine time is ``|Lambda| t``.
    """
    if p.N != basis.N:
        raise ValueError(f"parameters are for N={p.N}, basis has N={basis.N}")
    u = p.in_lambda_units()
    N = basis.N
    space = HilbertSpace("spin", N)
    terms = [
        HamiltonianTerm(collective_operator(basis, "Sperp2"), u.Lambda / N, label="(Lambda/N)(Sx^2+Sy^2)"),
        HamiltonianTerm(collective_operator(basis, "N0"), -u.Lambda, sched, offset=float(N), label="-q(t) N0"),
    ]
    if u.omega0_prime:
        terms.append(HamiltonianTerm(collective_operator(basis, "Sz"), u.omega0_prime, label="omega0' Sz"))
    channels = ()
    if u.Gamma > 0:
        channels = (JumpChannel(collective_operator(basis, "Sminus"), u.Gamma / N, label="collective decay"),)
    return EffectiveModel(
        variant="spinor",
        space=space,
        terms=tuple(terms),
        channels=channels,
        params={**asdict(u), "schedule": sched.to_dict()},
        observables={"Sz": collective_operator(basis, "Sz"), "N0": collective_operator(basis, "N0")},
    )


def build_reduced_model(p: SpinorModelParams, sched: SweepSchedule) -> EffectiveModel:
    """No-jump spinor dynamics on the pair basis ``|k, N-2k, k>``.

    The null-measurement back-action enters as the anti-Hermitian term
    ``-i (Gamma/N)(Sx^2 + Sy^2)``, so ``hamiltonian(t)`` is not Hermitian
    and the model has no jump channels.
    """
    from spinsinglet.reduced import reduced_operators

    u = p.in_lambda_units()
    N = p.N
    if N % 2:
        raise ValueError(f"even N required (got N={N})")
    ops = reduced_operators(N)
    space = HilbertSpace("pair", N)
    sperp2 = ops.sperp2_csr()
    n0 = sp.diags(ops.n0.astype(np.complex128), format="csr")
    terms = (
        HamiltonianTerm(sperp2, (u.Lambda - 1j * u.Gamma) / N, label="((Lambda - i Gamma)/N)(Sx^2+Sy^2)"),
        HamiltonianTerm(n0, -u.Lambda, sched, offset=float(N), label="-q(t) N0"),
    )
    return EffectiveModel(
        variant="reduced",
        space=space,
        terms=terms,
        params={**asdict(u), "schedule": sched.to_dict()},
        observables={"N0": n0},
    )


def physical_time(lambda_t: float, Lambda: float) -> float:
    """Convert a dimensionless ``|Lambda| t`` to time for angular ``Lambda``."""
    return lambda_t / abs(Lambda)

