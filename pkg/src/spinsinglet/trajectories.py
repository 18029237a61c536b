"""Monte-Carlo wave-function trajectories and a Lindblad integrator.

Trajectories use the waiting-time form of the quantum-jump method: draw
``r ~ U(0, 1)``, propagate the unnormalized state under
``H_eff = H(t) - i sum_c rate_c c^dag c`` on a fixed RK4 grid until
``||psi||^2 <= r``, bisect for the crossing time inside the last step, apply
one jump, renormalize and redraw. The grid is never shifted, so samples land
exactly on multiples of ``sample_interval``.

Each trajectory only touches the invariant subspace containing its current
state: the union of all Hamiltonian terms and the drift is split into
connected components once per model, and the state is propagated on the
component(s) its support touches.

Randomness: trajectory ``i`` of an ensemble with seed ``s`` draws from
``Philox4x64`` keyed by ``(s, i)``, so ensembles are independent of
execution order and thread count.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from spinsinglet import _kernels
from spinsinglet.models import EffectiveModel, HilbertSpace
from spinsinglet.reduced import NumericalError

log = logging.getLogger(__name__)

MAX_MASTER_DIM = 4000


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    t_max: float
    sample_interval: float
    seed: int = 0
    n_traj: int = 1
    jump_time_tolerance: float | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if self.sample_interval < self.dt:
            raise ValueError("sample_interval must be at least dt")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        for name, value in (("t_max", self.t_max), ("sample_interval", self.sample_interval)):
            n = round(value / self.dt)
            if n < 1 or abs(n * self.dt - value) > 1e-9 * max(1.0, value):
                raise ValueError(f"{name}={value} is not a positive multiple of dt={self.dt}")
        if self.n_steps % self.sample_every:
            raise ValueError("t_max must be a multiple of sample_interval")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def sample_every(self) -> int:
        return int(round(self.sample_interval / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_every + 1

    @property
    def tolerance(self) -> float:
        return self.dt * 1e-3 if self.jump_time_tolerance is None else self.jump_time_tolerance

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_every * self.dt


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


@dataclass(eq=False)
class TrajectoryRecord:
    index: int
    seed: int
    times: np.ndarray
    jump_times: np.ndarray
    jump_channels: np.ndarray
    S2: np.ndarray
    singlet_overlap: np.ndarray
    norm: np.ndarray
    jump_counts: np.ndarray
    extras: dict = field(default_factory=dict)
    final_state: np.ndarray | None = field(default=None, repr=False)
    valid: bool = True
    status: str = "ok"

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    @property
    def final_S2(self) -> float:
        return float(self.S2[-1])

    @property
    def final_overlap(self) -> float:
        return float(self.singlet_overlap[-1])

    def observable(self, name: str) -> np.ndarray:
        if name == "n_jumps":
            return self.jump_counts.sum(axis=1)
        if name in ("S2", "singlet_overlap", "norm"):
            return getattr(self, name)
        return self.extras[name]


@dataclass(frozen=True, eq=False)
class _Block:
    idx: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    term: np.ndarray


class _Propagator:
    """Kernel-ready generator pieces for one model, split by invariant subspace."""

    def __init__(self, model: EffectiveModel):
        self.model = model
        dim = model.dim
        ident = sp.identity(dim, dtype=np.complex128, format="csr")
        ops, scales, kinds, q0, xi, tmax = [], [], [], [], [], []
        for term in model.terms:
            op = term.operator - term.offset * ident if term.offset else term.operator
            ops.append(sp.csr_matrix(op))
            scales.append(complex(term.scale))
            s = term.schedule
            kinds.append(-1 if s is None else s.code)
            q0.append(0.0 if s is None else s.q0)
            xi.append(0.0 if s is None else s.xi)
            tmax.append(1.0 if s is None or s.t_max == 0 else s.t_max)
        if model.channels:
            ops.append(sp.csr_matrix(model.drift()))
            scales.append(-1j)
            kinds.append(-1)
            q0.append(0.0)
            xi.append(0.0)
            tmax.append(1.0)
        self.ops = ops
        self.scales = np.array(scales, dtype=np.complex128)
        self.kinds = np.array(kinds, dtype=np.int64)
        self.q0 = np.array(q0, dtype=float)
        self.xi = np.array(xi, dtype=float)
        self.tmax = np.array(tmax, dtype=float)
        self.jumps = [ch.operator for ch in model.channels]
        self.rates = np.array([ch.rate for ch in model.channels], dtype=float)

        pattern = sp.csr_matrix((dim, dim), dtype=float)
        for op in ops:
            pattern = pattern + abs(op)
        _, self.labels = connected_components(pattern, directed=False)
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.labels.max() + 2))
        self._blocks = {
            c: self._build(order[bounds[c]:bounds[c + 1]]) for c in range(len(bounds) - 1)
        }

    def _build(self, idx) -> _Block:
        idx = np.sort(idx)
        rows, cols, vals, tids = [], [], [], []
        for t, op in enumerate(self.ops):
            sub = op[idx][:, idx].tocoo()
            rows.append(sub.row)
            cols.append(sub.col)
            vals.append(sub.data)
            tids.append(np.full(sub.nnz, t, dtype=np.int64))
        rows = np.concatenate(rows)
        order = np.argsort(rows, kind="stable")
        indptr = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=len(idx)), out=indptr[1:])
        return _Block(
            idx,
            indptr,
            np.concatenate(cols)[order].astype(np.int64),
            np.concatenate(vals)[order].astype(np.complex128),
            np.concatenate(tids)[order],
        )

    def block_for(self, psi_full) -> _Block:
        comps = np.unique(self.labels[np.nonzero(psi_full)[0]])
        if len(comps) == 1:
            return self._blocks[int(comps[0])]
        return self._build(np.nonzero(np.isin(self.labels, comps))[0])

    def kernel_args(self, block: _Block):
        return (block.indptr, block.indices, block.data, block.term,
                self.scales, self.kinds, self.q0, self.xi, self.tmax)

    def step(self, psi, t, h, block) -> np.ndarray:
        out = np.empty_like(psi)
        _kernels.rk4_step(psi, out, t, h, *self.kernel_args(block))
        return out

    def global_phase(self, t: float) -> complex:
        return np.exp(-1j * sum(term.phase_integral(t) for term in self.model.terms))


class _Observer:
    """Sampled observables evaluated on full-space vectors."""

    def __init__(self, model: EffectiveModel):
        space: HilbertSpace = model.space
        self.space = space
        self.S2 = space.spin_operator("S2")
        self.singlet = space.singlet()
        self.names = sorted(model.observables)
        self.extras = [model.observables[n] for n in self.names]
        self.trunc_threshold = float(model.params.get("truncation_threshold", 1e-6))

    def __call__(self, psi):
        n2 = float(np.vdot(psi, psi).real)
        s2 = float(np.vdot(psi, self.S2 @ psi).real) / n2
        if self.singlet is None:
            ov = float("nan")
        elif self.space.kind == "spin_cavity":
            grid = psi.reshape(self.space.spin_dim, self.space.cavity_dim)
            ov = float(np.sum(np.abs(self.singlet.conj() @ grid) ** 2)) / n2
        else:
            ov = float(abs(np.vdot(self.singlet, psi)) ** 2) / n2
        extras = [float(np.vdot(psi, op @ psi).real) / n2 for op in self.extras]
        trunc = 0.0
        if self.space.kind == "spin_cavity":
            grid = psi.reshape(self.space.spin_dim, self.space.cavity_dim)
            trunc = float(np.sum(np.abs(grid[:, -2:]) ** 2)) / n2
        return n2, s2, ov, extras, trunc


@dataclass(eq=False)
class _Branch:
    """The shared pre-jump segment of every trajectory from one initial state."""

    norms: np.ndarray
    checkpoints: list
    block: _Block
    samples: tuple
    status: int
    steps_done: int

    def first_crossing(self, r: float):
        hit = self.norms[: self.steps_done] <= r
        if not hit.any():
            return None
        return int(np.argmax(hit)) + 1


class _Runner:
    def __init__(self, model: EffectiveModel, cfg: TrajectoryConfig):
        self.model = model
        self.cfg = cfg
        self.prop = _Propagator(model)
        self.obs = _Observer(model)

    def _initial(self, psi0) -> np.ndarray:
        psi = np.asarray(getattr(psi0, "amplitudes", psi0), dtype=np.complex128)
        if psi.shape != (self.model.dim,):
            raise ValueError(f"initial state has shape {psi.shape}, model dimension is {self.model.dim}")
        n = np.linalg.norm(psi)
        if abs(n - 1) > 1e-8:
            raise ValueError(f"initial state must be normalized (norm={n})")
        return psi / n

    def _embed(self, psi, block) -> np.ndarray:
        full = np.zeros(self.model.dim, dtype=np.complex128)
        full[block.idx] = psi
        return full

    def branch(self, psi0) -> _Branch:
        cfg = self.cfg
        full = self._initial(psi0)
        block = self.prop.block_for(full)
        psi = full[block.idx].copy()
        prev = np.empty_like(psi)
        args = self.prop.kernel_args(block)
        every = cfg.sample_every
        norms = np.empty(cfg.n_steps)
        checkpoints = [psi.copy()]
        samples = [self.obs(self._embed(psi, block))]
        step = 0
        status = _kernels.OK
        while step < cfg.n_steps:
            taken, _, status = _kernels.advance(
                psi, prev, step, every, cfg.dt, -1.0, norms[step:step + every], *args
            )
            step += taken
            if status != _kernels.OK:
                break
            checkpoints.append(psi.copy())
            samples.append(self.obs(self._embed(psi, block)))
        return _Branch(norms, checkpoints, block, tuple(samples), status, step)

    def run(self, psi0, index: int, branch: _Branch | None = None) -> TrajectoryRecord:
        cfg = self.cfg
        prop = self.prop
        rng = trajectory_rng(cfg.seed, index)
        every = cfg.sample_every
        n_ch = len(prop.jumps)

        S2 = np.full(cfg.n_samples, np.nan)
        ov = np.full(cfg.n_samples, np.nan)
        nrm = np.full(cfg.n_samples, np.nan)
        counts = np.zeros((cfg.n_samples, n_ch), dtype=np.int64)
        extras = np.full((len(self.obs.names), cfg.n_samples), np.nan)
        jump_t, jump_c = [], []
        valid, status = True, "ok"
        current = np.zeros(n_ch, dtype=np.int64)

        def record(m, full):
            nonlocal valid, status
            n2, s2, o, ex, trunc = self.obs(full) if not isinstance(full, tuple) else full
            nrm[m], S2[m], ov[m] = n2, s2, o
            extras[:, m] = ex
            counts[m] = current
            if trunc > self.obs.trunc_threshold and valid:
                valid, status = False, f"photon truncation population {trunc:.3g} at t={m * every * cfg.dt:g}"

        r = rng.random()
        step = 0
        if branch is not None and branch.status == _kernels.OK:
            j = branch.first_crossing(r)
            start = cfg.n_steps if j is None else ((j - 1) // every) * every
            for m in range(start // every + 1):
                record(m, branch.samples[m])
            block = branch.block
            psi = branch.checkpoints[start // every].copy()
            step = start
        else:
            full = self._initial(psi0)
            block = prop.block_for(full)
            psi = full[block.idx].copy()
            record(0, self._embed(psi, block))

        prev = np.empty_like(psi)
        norms = np.empty(every)
        while step < cfg.n_steps and valid:
            target = (step // every + 1) * every
            taken, crossed, code = _kernels.advance(
                psi, prev, step, target - step, cfg.dt, r, norms, *prop.kernel_args(block)
            )
            step += taken
            if code != _kernels.OK:
                valid, status = False, f"norm grew during step ending at t={step * cfg.dt:g}; reduce dt"
                break
            if crossed:
                t0 = (step - 1) * cfg.dt
                psi, block, r = self._jumps_in_step(prev, block, t0, cfg.dt, r, rng, jump_t, jump_c, current)
                prev = np.empty_like(psi)
            if step == target:
                record(step // every, self._embed(psi, block))

        final = self._embed(psi, block)
        final = final / np.linalg.norm(final) * prop.global_phase(step * cfg.dt)
        return TrajectoryRecord(
            index=index,
            seed=cfg.seed,
            times=cfg.times,
            jump_times=np.array(jump_t, dtype=float),
            jump_channels=np.array(jump_c, dtype=np.int64),
            S2=S2,
            singlet_overlap=ov,
            norm=nrm,
            jump_counts=counts,
            extras=dict(zip(self.obs.names, extras)),
            final_state=final,
            valid=valid,
            status=status,
        )

    def _bisect(self, psi, t, h, r, block):
        lo, hi = 0.0, h
        out = self.prop.step(psi, t, h, block)
        while hi - lo > self.cfg.tolerance:
            mid = 0.5 * (lo + hi)
            trial = self.prop.step(psi, t, mid, block)
            if np.vdot(trial, trial).real > r:
                lo = mid
            else:
                hi, out = mid, trial
        return hi, out

    def _jumps_in_step(self, psi, block, t, h, r, rng, jump_t, jump_c, current):
        """Resolve one or more jumps inside the grid step ``[t, t + h]``."""
        prop = self.prop
        t_end = t + h
        while True:
            tau, at = self._bisect(psi, t, t_end - t, r, block)
            t = t + tau
            full = self._embed(at, block)
            applied = [op @ full for op in prop.jumps]
            weights = prop.rates * np.array([np.vdot(v, v).real for v in applied])
            if weights.sum() <= 0:
                raise NumericalError(f"jump triggered at t={t:g} but every channel has zero weight")
            u = rng.random()
            ch = int(np.searchsorted(np.cumsum(weights) / weights.sum(), u, side="right"))
            ch = min(ch, len(weights) - 1)
            full = applied[ch] / np.linalg.norm(applied[ch])
            jump_t.append(t)
            jump_c.append(ch)
            current[ch] += 1
            r = rng.random()
            block = prop.block_for(full)
            psi = full[block.idx].copy()
            remaining = t_end - t
            if remaining <= 1e-15 * max(1.0, t_end):
                return psi, block, r
            out = prop.step(psi, t, remaining, block)
            if np.vdot(out, out).real > r:
                return out, block, r


def run_trajectory(model: EffectiveModel, psi0, cfg: TrajectoryConfig, index: int = 0) -> TrajectoryRecord:
    """One stochastic trajectory; a deterministic function of (model, psi0, cfg, index)."""
    return _Runner(model, cfg).run(psi0, index)


@dataclass(eq=False)
class EnsembleResult:
    records: list
    times: np.ndarray

    @property
    def valid_records(self) -> list:
        return [rec for rec in self.records if rec.valid]

    def stack(self, name: str) -> np.ndarray:
        return np.array([rec.observable(name) for rec in self.valid_records])

    def mean(self, name: str) -> np.ndarray:
        return self.stack(name).mean(axis=0)

    def stderr(self, name: str) -> np.ndarray:
        data = self.stack(name)
        if len(data) < 2:
            return np.full(data.shape[1], np.nan)
        return data.std(axis=0, ddof=1) / np.sqrt(len(data))

    @property
    def averages(self) -> dict:
        names = ["S2", "singlet_overlap", "n_jumps", "norm"]
        if self.records:
            names += sorted(self.records[0].extras)
        return {n: self.mean(n) for n in names}


def run_ensemble(model: EffectiveModel, psi0, cfg: TrajectoryConfig, threads: int = 1) -> EnsembleResult:
    """``cfg.n_traj`` trajectories; identical output for any ``threads``.

    ``threads=0`` uses one worker per CPU. The pre-jump segment shared by
    all trajectories is integrated once and replayed, which reproduces the
    direct computation exactly.
    """
    runner = _Runner(model, cfg)
    branch = runner.branch(psi0)

    def one(i):
        return runner.run(psi0, i, branch)

    if threads == 1:
        records = [one(i) for i in range(cfg.n_traj)]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            records = list(pool.map(one, range(cfg.n_traj)))
    bad = sum(not rec.valid for rec in records)
    if bad:
        log.warning("%d of %d trajectories flagged invalid", bad, len(records))
    return EnsembleResult(records, cfg.times)


def no_jump_evolution(model: EffectiveModel, psi0, cfg: TrajectoryConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized ``exp(-i int H_eff)`` evolution on the sample grid (full space)."""
    runner = _Runner(model, cfg)
    br = runner.branch(psi0)
    if br.status != _kernels.OK:
        raise NumericalError("norm grew during no-jump evolution; reduce dt")
    times = cfg.times
    states = np.zeros((len(times), model.dim), dtype=np.complex128)
    for m, chk in enumerate(br.checkpoints):
        states[m, br.block.idx] = chk * runner.prop.global_phase(times[m])
    return times, states


@dataclass(eq=False)
class DensityMatrix:
    space: HilbertSpace
    matrix: np.ndarray

    @classmethod
    def from_pure(cls, space: HilbertSpace, psi) -> "DensityMatrix":
        psi = np.asarray(getattr(psi, "amplitudes", psi), dtype=np.complex128)
        return cls(space, np.outer(psi, psi.conj()))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def expect(self, op) -> float:
        return float(np.real(np.sum(op.T.toarray() * self.matrix) if sp.issparse(op) else np.trace(op @ self.matrix)))

    def check(self, tol: float = 1e-8) -> None:
        if abs(self.trace - 1) > tol:
            raise NumericalError(f"trace {self.trace} differs from 1")
        if np.abs(self.matrix - self.matrix.conj().T).max() > tol:
            raise NumericalError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(self.matrix).min() < -tol:
            raise NumericalError("density matrix has a negative eigenvalue")


@dataclass(eq=False)
class MasterEquationResult:
    space: HilbertSpace
    times: np.ndarray
    states: np.ndarray = field(repr=False)

    def expect(self, op) -> np.ndarray:
        dense = op.toarray() if sp.issparse(op) else np.asarray(op)
        return np.real(np.einsum("ij,tji->t", dense, self.states))

    def __getitem__(self, m) -> DensityMatrix:
        return DensityMatrix(self.space, self.states[m])


def integrate_master_equation(
    model: EffectiveModel, rho0: DensityMatrix, cfg: TrajectoryConfig, max_dim: int = MAX_MASTER_DIM
) -> MasterEquationResult:
    """Fixed-step RK4 for ``d rho/dt = -i[H, rho] + sum_c rate_c D[c] rho``.

    ``D[c] rho = 2 c rho c^dag - rho c^dag c - c^dag c rho``. Dense, so meant
    for validation runs on small spaces.
    """
    dim = model.dim
    if dim > max_dim:
        raise ValueError(f"dimension {dim} exceeds the master-equation cap {max_dim}")
    terms = [(term, term.operator.toarray()) for term in model.terms]
    jumps = [(ch.rate, ch.operator.toarray()) for ch in model.channels]
    drift = model.drift().toarray()

    def heff(t):
        H = np.zeros((dim, dim), dtype=np.complex128)
        for term, mat in terms:
            H += term.coefficient(t) * mat
        return H - 1j * drift

    def rhs(t, rho):
        Hr = heff(t) @ rho
        out = -1j * (Hr - Hr.conj().T)
        for rate, c in jumps:
            out += 2 * rate * (c @ rho @ c.conj().T)
        return out

    rho = np.array(rho0.matrix, dtype=np.complex128)
    dt = cfg.dt
    every = cfg.sample_every
    states = np.empty((cfg.n_samples, dim, dim), dtype=np.complex128)
    states[0] = rho
    for s in range(cfg.n_steps):
        t = s * dt
        k1 = rhs(t, rho)
        k2 = rhs(t + dt / 2, rho + dt / 2 * k1)
        k3 = rhs(t + dt / 2, rho + dt / 2 * k2)
        k4 = rhs(t + dt, rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (s + 1) % every == 0:
            tr = np.trace(rho).real
            if abs(tr - 1) > 1e-8:
                raise NumericalError(f"trace drifted to {tr} at t={(s + 1) * dt:g}")
            states[(s + 1) // every] = rho
    return MasterEquationResult(model.space, cfg.times, states)


def write_trajectory_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "t", "S2", "singlet_overlap", "n_jumps", "norm"])
        for rec in records:
            total = rec.jump_counts.sum(axis=1)
            for m, t in enumerate(rec.times):
                w.writerow([rec.index, repr(float(t)), repr(float(rec.S2[m])), repr(float(rec.singlet_overlap[m])),
                            int(total[m]), repr(float(rec.norm[m]))])


def write_summary_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "seed", "n_jumps", "final_S2", "final_overlap", "valid"])
        for rec in records:
            w.writerow([rec.index, rec.seed, rec.n_jumps, repr(rec.final_S2), repr(rec.final_overlap), int(rec.valid)])
