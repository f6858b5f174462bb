"""Batch front-end: config parsing, experiment orchestration, report emission.

Configuration comes from a JSON file, command-line flags, or both (flags
win).  Every run writes ``report.json`` into the output directory, plus CSV
series when the format asks for them.  Reports embed the effective config
and a schema version, and reruns with the same config are byte-identical up
to the ``generated_at`` timestamp.

Exit codes: 0 success, 2 configuration or validation failure, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import monotonicity as mono
from .hermite import (
    QUADRATURE_COUNT_CAP,
    as_coeffs,
    basis_vector,
    gauss_hermite_rule,
    project,
    sobolev_weights,
    norm_p,
)
from .operators import OperatorParams
from .pde import METHODS, NumericalError, pde_run_csv_rows, solve_pde
from .spde import aggregate_se, energy_report, mc_mean, simulate

SCHEMA_VERSION = 1

COMMANDS = (
    "verify-monotonicity",
    "estimate-constant",
    "solve-pde",
    "simulate-spde",
    "mc-compare",
    "abc-tables",
)

FORMATS = ("json", "csv", "both")


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key."""


@dataclass
class RunConfig:
    command: str
    kappa: float = 1.0
    sigma: float = 1.0
    b: float = 0.0
    p: float = 1.0
    N: int = 64
    M: int = 1000
    dt: float = 0.001
    T: float = 0.5
    seed: int = 12345
    psi: str = "e0"
    method: str = "matrix-exponential"
    tol: float = 1e-3
    dump_paths: bool = False
    output_dir: str = "hspde-out"
    format: str = "json"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}")
        checks = [
            ("N", self.N >= 1, "N >= 1"),
            ("M", self.M >= 1, "M >= 1"),
            ("dt", np.isfinite(self.dt) and self.dt > 0, "dt > 0"),
            ("T", np.isfinite(self.T) and self.T >= 0, "T >= 0"),
            ("p", np.isfinite(self.p), "finite real"),
            ("kappa", np.isfinite(self.kappa), "finite real"),
            ("sigma", np.isfinite(self.sigma), "finite real"),
            ("b", np.isfinite(self.b), "finite real"),
            ("seed", 0 <= self.seed < 2**64, "64-bit nonnegative integer"),
            ("tol", np.isfinite(self.tol) and self.tol > 0, "tol > 0"),
            ("format", self.format in FORMATS, f"one of {FORMATS}"),
            ("method", self.method in METHODS, f"one of {METHODS}"),
        ]
        for key, ok, want in checks:
            if not ok:
                raise ConfigError(f"{key}: constraint violated, expected {want}")
        return self

    def params(self) -> OperatorParams:
        return OperatorParams(kappa=self.kappa, sigma=self.sigma, b=self.b)

    def as_json(self) -> dict:
        out = dataclasses.asdict(self)
        for key, val in out.items():
            if isinstance(val, (np.floating, np.integer)):
                out[key] = val.item()
        return out


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_INT_KEYS = {"N", "M", "seed"}
_FLOAT_KEYS = {"kappa", "sigma", "b", "p", "dt", "T", "tol"}
_STR_KEYS = {"command", "psi", "method", "output_dir", "format"}
_BOOL_KEYS = {"dump_paths"}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
                raise TypeError
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if key in _BOOL_KEYS:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key in _STR_KEYS:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: type mismatch, expected {_FIELD_TYPES[key]}")
    raise ConfigError(f"{key}: unknown configuration key")


def build_config(file_values: dict | None, flag_values: dict) -> RunConfig:
    """Merge file values and flag overrides into a validated RunConfig."""
    merged: dict = {}
    if file_values is not None:
        for key, val in file_values.items():
            merged[key] = _coerce(key, val)
    for key, val in flag_values.items():
        if val is not None:
            merged[key] = _coerce(key, val)
    if "command" not in merged:
        raise ConfigError("command: required key missing")
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return cfg.validate()


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hspde",
        description="Spectral experiments for the fourth-order drift-diffusion system",
        epilog=(
            "Defaults: kappa=1 sigma=1 b=0 p=1 N=64 M=1000 dt=1e-3 T=0.5 "
            "seed=12345 psi=e0 format=json out=hspde-out. File keys equal "
            "flag names (out -> output_dir); flags override the file."
        ),
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--p", type=float, help="regularity index")
    parser.add_argument("--N", type=int, help="truncation level")
    parser.add_argument("--kappa", type=float, help="fourth-order coefficient")
    parser.add_argument("--sigma", type=float, help="second-order coefficient")
    parser.add_argument("--b", type=float, help="transport coefficient")
    parser.add_argument("--dt", type=float, help="time step")
    parser.add_argument("--T", type=float, help="time horizon")
    parser.add_argument("--M", type=int, help="Monte-Carlo path count")
    parser.add_argument("--seed", type=int, help="master seed (64-bit)")
    parser.add_argument(
        "--psi", help="initial condition: e<k>, gaussian(<variance>), or c0,c1,..."
    )
    parser.add_argument("--out", dest="output_dir", help="output directory")
    parser.add_argument("--format", choices=FORMATS, help="report format")
    parser.add_argument("--method", choices=METHODS, help="time integrator for solve-pde")
    parser.add_argument(
        "--dump-paths", dest="dump_paths", action="store_const", const=True,
        help="also write one CSV per simulated path",
    )
    return parser


def parse_config(argv) -> RunConfig:
    args = _make_parser().parse_args(argv)
    file_values = None
    if args.config is not None:
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: malformed JSON in {args.config}: {exc}")
        if not isinstance(file_values, dict):
            raise ConfigError("config: top level must be a JSON object")
    flag_values = {
        key: getattr(args, key)
        for key in (
            "command", "p", "N", "kappa", "sigma", "b", "dt", "T", "M",
            "seed", "psi", "output_dir", "format", "method", "dump_paths",
        )
    }
    return build_config(file_values, flag_values)


def resolve_psi(cfg: RunConfig) -> np.ndarray:
    """Initial condition from its spec string: e<k>, gaussian(v), or a list."""
    spec = cfg.psi.strip()
    if spec.startswith("e") and spec[1:].isdigit():
        k = int(spec[1:])
        if k >= cfg.N:
            raise ConfigError(f"psi: basis index {k} needs N > {k}")
        return basis_vector(k, cfg.N)
    if spec.startswith("gaussian(") and spec.endswith(")"):
        try:
            var = float(spec[len("gaussian(") : -1])
        except ValueError:
            raise ConfigError(f"psi: cannot parse variance in {spec!r}")
        if not (np.isfinite(var) and var > 0):
            raise ConfigError("psi: gaussian variance must be positive")
        rule = gauss_hermite_rule(min(QUADRATURE_COUNT_CAP, max(256, 2 * cfg.N)))
        dens = lambda x: np.exp(-0.5 * x * x / var) / np.sqrt(2.0 * np.pi * var)
        return project(dens, cfg.N, rule)
    try:
        values = [float(tok) for tok in spec.split(",")]
    except ValueError:
        raise ConfigError(f"psi: cannot parse {spec!r}")
    if len(values) > cfg.N:
        raise ConfigError(f"psi: {len(values)} coefficients exceed N={cfg.N}")
    out = np.zeros(cfg.N)
    out[: len(values)] = as_coeffs(values)
    return out


def _assert_finite(obj, path="report"):
    if isinstance(obj, dict):
        for key, val in obj.items():
            _assert_finite(val, f"{path}.{key}")
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            _assert_finite(val, f"{path}[{i}]")
    elif isinstance(obj, float) and not np.isfinite(obj):
        raise NumericalError(f"non-finite value at {path}")


def _write_json(path: str, obj: dict) -> None:
    _assert_finite({k: v for k, v in obj.items() if k != "generated_at"})
    payload = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, rows) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report_skeleton(cfg: RunConfig) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "command": cfg.command,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "config": cfg.as_json(),
    }


def _cmd_verify_monotonicity(cfg: RunConfig, report: dict, outdir: str) -> None:
    rng = np.random.default_rng(cfg.seed)
    seqs = mono.abc_sequences(cfg.p, cfg.N + 4)
    worst = 0.0
    for _ in range(100):
        u = rng.uniform(-1.0, 1.0, cfg.N)
        bf = mono.bilap_form(u, cfg.p)
        af = mono.abc_form(u, seqs)
        worst = max(worst, abs(bf - af) / (1.0 + abs(bf)))
    est = mono.estimate_constant(cfg.p, None, N_max=max(32, cfg.N), tol=cfg.tol)
    report["identity_max_rel_error"] = worst
    report["abc_max_abs"] = {
        "a": float(np.max(np.abs(seqs.a))),
        "b": float(np.max(np.abs(seqs.b))),
        "c": float(np.max(np.abs(seqs.c))),
    }
    report["C_estimate"] = est.C_estimate
    report["N_sweep"] = [[int(n), float(c)] for n, c in est.N_sweep]
    report["converged"] = est.converged


def _cmd_estimate_constant(cfg: RunConfig, report: dict, outdir: str) -> None:
    if cfg.N < 16:
        raise ConfigError("N: constraint violated, expected N >= 16 for the sweep")
    bilap = mono.estimate_constant(cfg.p, None, N_max=cfg.N, tol=cfg.tol)
    la = mono.estimate_constant(cfg.p, cfg.params(), N_max=cfg.N, tol=cfg.tol)
    report["bilap"] = bilap.to_json()
    report["la"] = la.to_json()
    if cfg.format in ("csv", "both"):
        rows = [["N", "C_bilap", "C_la"]]
        for (n, cb), (_, cl) in zip(bilap.N_sweep, la.N_sweep):
            rows.append([n, cb, cl])
        _write_csv(os.path.join(outdir, "constant_sweep.csv"), rows)


def _cmd_abc_tables(cfg: RunConfig, report: dict, outdir: str) -> None:
    seqs = mono.abc_sequences(cfg.p, cfg.N + 1)
    if cfg.format in ("csv", "both"):
        rows = [["l", "a_l", "b_l", "c_l"]]
        for l in range(cfg.N + 1):
            rows.append([l, float(seqs.a[l]), float(seqs.b[l]), float(seqs.c[l])])
        _write_csv(os.path.join(outdir, "abc_tables.csv"), rows)
        ks = np.unique(np.logspace(1, 6, 101).astype(np.int64))
        f1, f2, f3, f4 = mono.f_functions(1.0 / ks.astype(np.float64), cfg.p)
        frows = [["k", "k2_f1", "k2_f2", "k_f3", "k_f4"]]
        for i, k in enumerate(ks):
            frows.append(
                [int(k), float(k * k * f1[i]), float(k * k * f2[i]),
                 float(k * f3[i]), float(k * f4[i])]
            )
        _write_csv(os.path.join(outdir, "f_decay.csv"), frows)
    report["g_at_zero"] = {f"g{j}": mono.g_at_zero(j, cfg.p) for j in (1, 2, 3, 4)}
    report["tail"] = {
        "a": float(seqs.a[-1]),
        "b": float(seqs.b[-1]),
        "c": float(seqs.c[-1]),
    }


def _time_grid(cfg: RunConfig) -> np.ndarray:
    n_steps = int(round(cfg.T / cfg.dt))
    if n_steps < 1 or abs(cfg.T / cfg.dt - n_steps) > 1e-9 * max(1.0, cfg.T / cfg.dt):
        raise ConfigError("T: constraint violated, expected T to be a multiple of dt")
    return cfg.dt * np.arange(n_steps + 1)


def _cmd_solve_pde(cfg: RunConfig, report: dict, outdir: str) -> None:
    psi = resolve_psi(cfg)
    run = solve_pde(psi, cfg.params(), cfg.p, _time_grid(cfg), method=cfg.method)
    report["pde"] = run.summary_json()
    if cfg.format in ("csv", "both"):
        _write_csv(os.path.join(outdir, "pde_states.csv"), pde_run_csv_rows(run))


def _save_times(cfg: RunConfig) -> np.ndarray:
    steps = int(round(cfg.T / cfg.dt))
    marks = sorted({0, *np.linspace(0, steps, 6).round().astype(int).tolist(), steps})
    return cfg.dt * np.asarray(marks, dtype=np.float64)


def _ensemble_summary(cfg: RunConfig, ens) -> dict:
    w_p = sobolev_weights(cfg.p, cfg.N)
    w_q = sobolev_weights(cfg.p - 2.0, cfg.N)
    times = []
    for k, t in enumerate(ens.save_times):
        mean, se = mc_mean(ens, k)
        times.append(
            {
                "t": float(t),
                "mean": [float(x) for x in mean],
                "se": [float(x) for x in se],
                "mean_norm_p": norm_p(mean, w_p),
                "mean_norm_p_minus_2": norm_p(mean, w_q),
                "aggregate_se_p_minus_2": aggregate_se(se, cfg.p - 2.0),
            }
        )
    return {
        "n_paths": ens.n_paths,
        "failed_paths": list(ens.failed),
        "save_times": [float(t) for t in ens.save_times],
        "per_time": times,
    }


def _cmd_simulate_spde(cfg: RunConfig, report: dict, outdir: str) -> None:
    psi = resolve_psi(cfg)
    ens = simulate(
        psi, cfg.params(), cfg.p, cfg.N, cfg.dt, cfg.T, cfg.M, cfg.seed,
        save_times=_save_times(cfg),
    )
    report["ensemble"] = _ensemble_summary(cfg, ens)
    if cfg.dump_paths and cfg.format in ("csv", "both"):
        for m in range(ens.n_paths):
            rows = [["t"] + [f"c{k}" for k in range(cfg.N)]]
            for k, t in enumerate(ens.save_times):
                rows.append([float(t)] + [float(x) for x in ens.states[m, k]])
            _write_csv(os.path.join(outdir, f"path_{m:05d}.csv"), rows)


def _cmd_mc_compare(cfg: RunConfig, report: dict, outdir: str) -> None:
    psi = resolve_psi(cfg)
    save = _save_times(cfg)
    ens = simulate(
        psi, cfg.params(), cfg.p, cfg.N, cfg.dt, cfg.T, cfg.M, cfg.seed,
        save_times=save,
    )
    run = solve_pde(psi, cfg.params(), cfg.p, _time_grid(cfg), method="implicit-euler")
    last = len(save) - 1
    mean, se = mc_mean(ens, last)
    w_q = sobolev_weights(cfg.p - 2.0, cfg.N)
    gap = norm_p(mean - run.states[-1], w_q)
    agg = aggregate_se(se, cfg.p - 2.0)
    est = mono.estimate_constant(cfg.p - 2.0, cfg.params(), N_max=512, tol=cfg.tol)
    energy = energy_report(ens, est.C_estimate, cfg.p - 2.0)
    report["ensemble"] = _ensemble_summary(cfg, ens)
    report["gap_p_minus_2"] = gap
    report["aggregate_se"] = agg
    report["gap_over_se"] = gap / agg if agg > 0 else 0.0
    report["C_used"] = est.C_estimate
    report["energy_ok"] = energy.ok
    report["energy_worst_margin"] = energy.worst_margin
    report["energy_mean_sq_norms"] = [float(x) for x in energy.mean_sq_norm]
    report["energy_bounds"] = [float(x) for x in energy.bounds]


_DISPATCH = {
    "verify-monotonicity": _cmd_verify_monotonicity,
    "estimate-constant": _cmd_estimate_constant,
    "abc-tables": _cmd_abc_tables,
    "solve-pde": _cmd_solve_pde,
    "simulate-spde": _cmd_simulate_spde,
    "mc-compare": _cmd_mc_compare,
}


def run(cfg: RunConfig) -> int:
    """Execute one configured command, writing artifacts into the output dir."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    report = _report_skeleton(cfg)
    _DISPATCH[cfg.command](cfg, report, cfg.output_dir)
    _write_json(os.path.join(cfg.output_dir, "report.json"), report)
    return 0


def main(argv=None) -> int:
    log = lambda msg: print(msg, file=sys.stderr)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        log(f"hspde: configuration error: {exc}")
        return 2
    try:
        log(f"hspde: running {cfg.command} -> {cfg.output_dir}")
        code = run(cfg)
        log(f"hspde: wrote {os.path.join(cfg.output_dir, 'report.json')}")
        return code
    except (ConfigError, ValueError) as exc:
        log(f"hspde: validation error: {exc}")
        return 2
    except (NumericalError, mono.PowerIterationError, mono.ExtrapolationError,
            np.linalg.LinAlgError) as exc:
        log(f"hspde: numerical failure: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
