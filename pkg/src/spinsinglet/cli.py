"""Command-line front end: ``spinsinglet {decompose,trajectories,scan,physical}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 scan in which every point failed.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from spinsinglet import __version__
from spinsinglet.analysis import regime_check, split_by_jumps
from spinsinglet.collective import basis_state, build_basis, dicke_decomposition, dicke_state, singlet_vector
from spinsinglet.models import (
    CavitySpace,
    DispersiveRegimeWarning,
    EffectiveDickeParams,
    MicroscopicParams,
    SpinorModelParams,
    SweepSchedule,
    build_dicke_model,
    build_spinor_model,
    effective_dicke_params,
    physical_time,
    spinor_params,
)
from spinsinglet.presets import PRESETS
from spinsinglet.reduced import NumericalError, scan_sweep
from spinsinglet.trajectories import TrajectoryConfig, run_ensemble, write_summary_csv, write_trajectory_csv

log = logging.getLogger("spinsinglet")

OUT_ENV = "SPINSINGLET_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SCAN = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; keys in ``override`` win."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, preset=None) -> dict:
    cfg = {}
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text() or "{}")
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    name = preset or cfg.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        cfg = merge(PRESETS[name], cfg)
        cfg["preset"] = name
    return cfg


def _require(cfg: dict, section: str, keys) -> dict:
    block = cfg.get(section) if section else cfg
    where = section or "config"
    if not isinstance(block, dict):
        raise ConfigError(f"missing section {where!r} (needs {', '.join(keys)})")
    missing = [k for k in keys if k not in block]
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {', '.join(missing)}")
    return block


def _number(block, key, default=None, cast=float):
    value = block.get(key, default)
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {key!r} must be a number, got {value!r}") from exc


# ---------------------------------------------------------------- outputs

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, config: dict, files, started: float, extra=None) -> Path:
    manifest = {
        "version": __version__,
        "config": config,
        "outputs": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in files},
        "wall_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(path) -> list[str]:
    """Names of outputs whose checksum no longer matches (or that vanished)."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    bad = []
    for name, digest in manifest["outputs"].items():
        f = path.parent / name
        if not f.exists() or _sha256(f) != digest:
            bad.append(name)
    return bad


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("out") or os.environ.get(OUT_ENV) or "spinsinglet-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- commands

def cmd_decompose(N: int, out: Path) -> list[Path]:
    if N % 2:
        raise ConfigError(f"even N required (got N={N})")
    comps = dicke_decomposition(build_basis(N))
    path = out / f"decomposition_N{N}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "weight"])
        for c in comps:
            w.writerow([c.k, repr(c.weight)])
    print(f"|d_0|^2 = {comps[0].weight:.12g}  (1/(N+1) = {1 / (N + 1):.12g})")
    return [path]


def _initial_state(spec, basis, space):
    spec = spec or "m0"
    if spec == "m0":
        spin = basis_state(basis, 0, basis.N, 0).amplitudes
    elif spec == "singlet":
        spin = singlet_vector(basis).amplitudes
    elif isinstance(spec, dict) and "dicke" in spec:
        S, M = spec["dicke"]
        spin = dicke_state(basis, int(S), int(M)).amplitudes
    else:
        raise ConfigError(f"initial state {spec!r} not understood (use 'm0', 'singlet' or {{'dicke': [S, M]}})")
    return space.with_vacuum(spin)


def _trajectory_config(cfg, seed) -> TrajectoryConfig:
    t = _require(cfg, "trajectory", ["dt", "t_max", "sample_interval", "n_traj"])
    try:
        return TrajectoryConfig(
            dt=_number(t, "dt"),
            t_max=_number(t, "t_max"),
            sample_interval=_number(t, "sample_interval"),
            seed=int(seed if seed is not None else t.get("seed", 0)),
            n_traj=_number(t, "n_traj", cast=int),
            jump_time_tolerance=t.get("jump_time_tolerance"),
        )
    except ValueError as exc:
        raise ConfigError(f"trajectory: {exc}") from exc


def _build_models(cfg):
    """List of ``(label, model)`` pairs; spinor configs may list several Gamma values."""
    _require(cfg, None, ["variant", "N", "params"])
    variant = cfg["variant"]
    N = _number(cfg, "N", cast=int)
    basis = build_basis(N)
    p = cfg["params"]
    if variant in ("tavis_cummings", "dicke"):
        _require(cfg, "params", ["lambda_minus", "kappa"])
        lam_p = _number(p, "lambda_plus", 0.0)
        if variant == "tavis_cummings" and lam_p:
            raise ConfigError("tavis_cummings requires lambda_plus = 0")
        d = EffectiveDickeParams(
            _number(p, "omega", 0.0), _number(p, "omega0", 0.0),
            _number(p, "lambda_minus"), lam_p, _number(p, "kappa"), N,
        ).in_kappa_units()
        regime_check(d)
        cav = cfg.get("cavity") or {}
        n_max = cav.get("n_max") or CavitySpace.default(N).n_max
        cavity = CavitySpace(int(n_max), float(cav.get("monitor_threshold", 1e-6)))
        return [("", build_dicke_model(d, basis, cavity))]
    if variant == "spinor":
        _require(cfg, "params", ["gamma_over_lambda"])
        s = _require(cfg, "schedule", ["kind", "q0"])
        try:
            sched = SweepSchedule(s["kind"], _number(s, "q0"), _number(s, "xi", 0.0), _number(s, "t_max", 0.0))
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc
        Lam = _number(p, "Lambda", 1.0)
        gammas = p["gamma_over_lambda"]
        many = isinstance(gammas, list)
        models = []
        for g in gammas if many else [gammas]:
            sp_ = SpinorModelParams(Lam, float(g) * abs(Lam), _number(p, "omega0_prime", 0.0), N)
            models.append((f"gamma_{float(g)!r}" if many else "", build_spinor_model(sp_, sched, basis)))
        return models
    raise ConfigError(f"variant {variant!r} is not runnable as trajectories (use tavis_cummings, dicke or spinor)")


def cmd_trajectories(cfg: dict, out: Path, seed=None, threads: int = 1) -> list[Path]:
    _require(cfg, None, ["variant", "N", "params", "trajectory"])
    tcfg = _trajectory_config(cfg, seed)
    files = []
    for label, model in _build_models(cfg):
        target = out / label if label else out
        target.mkdir(parents=True, exist_ok=True)
        psi0 = _initial_state(cfg.get("initial"), build_basis(model.space.N), model.space)
        ens = run_ensemble(model, psi0, tcfg, threads=threads)
        invalid = [r for r in ens.records if not r.valid]
        if len(invalid) == len(ens.records):
            raise NumericalError(f"every trajectory failed: {invalid[0].status}")
        write_trajectory_csv(ens.records, target / "trajectories.csv")
        write_summary_csv(ens.records, target / "summary.csv")
        split = split_by_jumps(ens.records)
        split.to_json(target / "split.json")
        split.histogram_csv(target / "spin_length_hist.csv")
        files += [target / n for n in ("trajectories.csv", "summary.csv", "split.json", "spin_length_hist.csv")]
        print(f"{label or model.variant}: {len(ens.records)} trajectories, "
              f"no-jump fraction {split.no_jump_fraction:.4f}, invalid {len(invalid)}")
    return files


def cmd_scan(cfg: dict, out: Path, threads: int = 1) -> tuple[list[Path], int, int]:
    _require(cfg, None, ["N", "gamma_over_lambda"])
    s = cfg.get("schedule") or {}
    grid = lambda key: None if cfg.get(key) is None else np.atleast_1d(np.asarray(cfg[key], dtype=float))
    try:
        res = scan_sweep(
            _number(cfg, "N", cast=int),
            _number(cfg, "gamma_over_lambda"),
            q0_grid=grid("q0_grid"),
            xi_grid=grid("xi_grid"),
            t_max=_number(s, "t_max", 200.0),
            kind=s.get("kind", "exponential"),
            dt=_number(cfg, "dt", 1e-3),
            threads=threads,
            rtol=_number(cfg, "rtol", 1e-3),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    path = out / "scan.csv"
    res.to_csv(path)
    for pt in res.points:
        if not pt.ok:
            log.warning("scan point q0=%g xi=%g failed: %s", pt.q0, pt.xi, pt.error)
    if res.n_failed < len(res.points):
        b = res.best()
        print(f"best p = {b.p:.4f} at q0={b.q0:g}, xi={b.xi:g} (p_s={b.p_s:.4f}, overlap={b.overlap:.4f})")
    return [path], res.n_failed, len(res.points)


def _hz_factor(cfg) -> float:
    units = cfg.get("units", "hz")
    if units not in ("hz", "angular"):
        raise ConfigError("units must be 'hz' (values are omega/2pi) or 'angular'")
    return 2 * math.pi if units == "hz" else 1.0


def cmd_physical(cfg: dict, out: Path) -> list[Path]:
    """Effective parameters, regime check and sweep duration from lab numbers."""
    f = _hz_factor(cfg)
    if "microscopic" in cfg:
        m = cfg["microscopic"]
        keys = ["g", "Omega_minus", "Omega_plus", "Delta", "omega_c", "omega_minus", "omega_plus", "omega_z", "kappa"]
        _require(cfg, "microscopic", keys + ["N"])
        try:
            mu = MicroscopicParams(**{k: _number(m, k) * f for k in keys}, N=_number(m, "N", cast=int))
        except ValueError as exc:
            raise ConfigError(f"microscopic: {exc}") from exc
        d = effective_dicke_params(mu)
    elif "effective" in cfg:
        e = _require(cfg, "effective", ["omega", "lambda_minus", "kappa", "N"])
        try:
            d = EffectiveDickeParams(
                _number(e, "omega") * f, _number(e, "omega0", 0.0) * f, _number(e, "lambda_minus") * f,
                _number(e, "lambda_plus", 0.0) * f, _number(e, "kappa") * f, _number(e, "N", cast=int),
            )
        except ValueError as exc:
            raise ConfigError(f"effective: {exc}") from exc
    else:
        raise ConfigError("physical needs a 'microscopic' or 'effective' section")

    report = {"units": "angular frequency (rad/s)", "dicke": {k: getattr(d, k) for k in
              ("omega", "omega0", "lambda_minus", "lambda_plus", "kappa", "N")}}
    report["regime"] = json.loads(regime_check(d, warn=False).to_json())
    if d.omega != 0:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DispersiveRegimeWarning)
            s = spinor_params(d)
        report["warnings"] = [str(w.message) for w in caught]
        lambda_t = _number(cfg, "lambda_t", 200.0)
        report["spinor"] = {"Lambda": s.Lambda, "Gamma": s.Gamma, "omega0_prime": s.omega0_prime}
        report["ratios"] = {
            "Gamma_over_Lambda": s.Gamma / abs(s.Lambda) if s.Lambda else math.inf,
            "lambda_minus_over_kappa": d.lambda_minus / d.kappa,
            "omega_over_kappa": d.omega / d.kappa,
        }
        if s.Lambda:
            report["sweep"] = {"lambda_t": lambda_t, "seconds": physical_time(lambda_t, s.Lambda)}
    path = out / "physical.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return [path]


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinsinglet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./spinsinglet-out)")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU")

    p = sub.add_parser("decompose", help="Dicke decomposition of |0,N,0>")
    p.add_argument("N", type=int)
    p.add_argument("--out")
    p = sub.add_parser("trajectories", help="quantum-jump ensemble")
    common(p)
    p.add_argument("--seed", type=int, help="64-bit ensemble seed (overrides config)")
    p = sub.add_parser("scan", help="pair-basis sweep scan over (q0, xi)")
    common(p)
    p = sub.add_parser("physical", help="effective parameters from lab numbers")
    common(p, threads=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.time()
    try:
        if args.command == "decompose":
            cfg = {"command": "decompose", "N": args.N}
            out = _out_dir(args, cfg)
            files = cmd_decompose(args.N, out)
            write_manifest(out, cfg, files, started)
            return EXIT_OK
        cfg = load_config(args.config, args.preset)
        if cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
        cfg["command"] = args.command
        out = _out_dir(args, cfg)
        if args.command == "trajectories":
            if args.seed is not None:
                cfg = merge(cfg, {"trajectory": {"seed": args.seed}})
            files = cmd_trajectories(cfg, out, threads=args.threads)
            write_manifest(out, cfg, files, started)
        elif args.command == "scan":
            files, failed, total = cmd_scan(cfg, out, threads=args.threads)
            write_manifest(out, cfg, files, started, {"failed_points": failed})
            if failed == total:
                print("every scan point failed", file=sys.stderr)
                return EXIT_SCAN
        else:
            files = cmd_physical(cfg, out)
            write_manifest(out, cfg, files, started)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
