"""``cpdsplit`` command line: run, sweep, energy, check.

Exit codes: 0 success, 1 numerical failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .fields import PRESETS
from .harness import (DEFAULT_EPS_GRID, DEFAULT_H_GRID, ConfigError, RunSpec, energy_csv,
                      energy_summary, orders_csv, report_csv, report_json, run_check, run_energy,
                      run_sweep, run_trajectory, trajectory_csv)
from .integrators import SchemeId, SolverParams, StepFailure
from .reference import OracleFailure, RKConfig

log = logging.getLogger("cpdsplit")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2

ALL_SCHEMES = [s.value for s in SchemeId]

# per-command defaults for options that differ between subcommands
COMMAND_DEFAULTS = {
    "run": {"eps": [1.0], "scheme": ["S1AVF"], "h": [0.01], "t_end": 1.0},
    "sweep": {"eps": list(DEFAULT_EPS_GRID), "scheme": ALL_SCHEMES, "h": list(DEFAULT_H_GRID),
              "t_end": 1.0},
    "energy": {"eps": [1.0], "scheme": ALL_SCHEMES, "h": [0.01], "t_end": 100.0},
    "check": {"eps": list(DEFAULT_EPS_GRID), "scheme": ALL_SCHEMES, "h": list(DEFAULT_H_GRID),
              "t_end": 1.0},
}
SHARED_DEFAULTS = {
    "preset": "problem1", "fp_tol": 1e-14, "fp_max_iters": 1000, "atol": 1e-12,
    "rtol": 1e-12, "out": None, "workers": 1, "sample_every": 1, "x0": None, "v0": None,
    "omega0": [0.0, 0.0, 1.0], "e0": [0.1, 0.05, 0.0], "nonres_c": 0.05,
    "strict_nonresonance": False, "samples": 1000,
}


def _add_shared(p: argparse.ArgumentParser):
    # defaults are None so that config-file values can be told apart from flags
    p.add_argument("--config", type=Path, help="JSON object of option values (flags win)")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--eps", type=float, action="append", help="repeatable")
    p.add_argument("--scheme", action="append", help="S1AVF, S1SV or S1VP; repeatable")
    p.add_argument("--h", type=float, action="append", help="step size; repeatable")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--fp-tol", type=float, dest="fp_tol")
    p.add_argument("--fp-max-iters", type=int, dest="fp_max_iters")
    p.add_argument("--atol", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--out", help="output directory (run: stdout if omitted)")
    p.add_argument("--workers", type=int)
    p.add_argument("--sample-every", type=int, dest="sample_every")
    p.add_argument("--x0", type=float, nargs=3)
    p.add_argument("--v0", type=float, nargs=3)
    p.add_argument("--omega0", type=float, nargs=3, help="constant preset rotation axis")
    p.add_argument("--e0", type=float, nargs=3, help="constant preset electric field")
    p.add_argument("--nonres-c", type=float, dest="nonres_c")
    p.add_argument("--strict-nonresonance", action="store_const", const=True,
                   dest="strict_nonresonance",
                   help="check: non-resonance violations also fail the exit code")
    p.add_argument("--samples", type=int, help="check: random kernel inputs")
    p.add_argument("--print-config", action="store_true", dest="print_config")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpdsplit",
        description="Lie-Trotter splitting integrators for charged particles in strong "
                    "magnetic fields")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "integrate one trajectory and write a CSV"),
                        ("sweep", "convergence sweep over schemes, eps and h"),
                        ("energy", "long-time energy drift per scheme"),
                        ("check", "kernel oracles, cross-validation, non-resonance")]:
        _add_shared(sub.add_parser(name, help=help_))
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    cfg = dict(SHARED_DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[args.command])
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("eps", "scheme", "h"):
        if not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    return cfg


def spec_from_config(cfg: dict) -> RunSpec:
    try:
        schemes = tuple(SchemeId.parse(s) for s in cfg["scheme"])
        solver = SolverParams(fp_tol=float(cfg["fp_tol"]), fp_max_iters=int(cfg["fp_max_iters"]))
        rk = RKConfig(atol=float(cfg["atol"]), rtol=float(cfg["rtol"]))
        hs = sorted({float(h) for h in cfg["h"]}, reverse=True)
        if len(hs) != len(cfg["h"]):
            raise ConfigError("duplicate step sizes in h grid")
        return RunSpec(
            preset=cfg["preset"], eps=tuple(float(e) for e in cfg["eps"]), schemes=schemes,
            hs=tuple(hs), t_end=float(cfg["t_end"]),
            x0=tuple(cfg["x0"]) if cfg["x0"] is not None else None,
            v0=tuple(cfg["v0"]) if cfg["v0"] is not None else None,
            omega0=tuple(cfg["omega0"]), e0=tuple(cfg["e0"]), solver=solver, rk=rk,
            sample_every=int(cfg["sample_every"]), workers=int(cfg["workers"]),
            nonres_c=float(cfg["nonres_c"]), check_samples=int(cfg["samples"]))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _write(out_dir, name, text):
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_run(spec: RunSpec, out) -> int:
    if len(spec.schemes) != 1 or len(spec.hs) != 1 or len(spec.eps) != 1:
        raise ConfigError("run takes a single scheme, step size and eps")
    traj, drift = run_trajectory(spec)
    text = trajectory_csv(traj, drift)
    if out is None:
        sys.stdout.write(text)
    else:
        _write(out, f"trajectory_{spec.schemes[0].value}.csv", text)
    return EXIT_OK


def cmd_sweep(spec: RunSpec, out) -> int:
    report = run_sweep(spec)
    doc = report_json(report)
    if out is None:
        sys.stdout.write(doc)
    else:
        _write(out, "sweep.csv", report_csv(report))
        _write(out, "sweep_orders.csv", orders_csv(report))
        _write(out, "sweep.json", doc)
    for (sc, eps), p in sorted(report.fitted_order.items()):
        log.info("order %s eps=%g: %.3f", sc, eps, p)
    return EXIT_OK if all(r.ok for r in report.records) else EXIT_NUMERICAL


def cmd_energy(spec: RunSpec, out) -> int:
    if len(spec.eps) != 1:
        raise ConfigError("energy takes a single eps")
    results = run_energy(spec)
    summary = energy_summary(spec, results)
    doc = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(doc)
    else:
        for name, (traj, drift) in results.items():
            _write(out, f"energy_{name}.csv", energy_csv(traj, drift))
        _write(out, "energy.json", doc)
    return EXIT_OK


def cmd_check(spec: RunSpec, out, strict_nonresonance=False) -> int:
    report = run_check(spec)
    doc = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is not None:
        _write(out, "check.json", doc)
    checks = report["checks"]
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    for row in report["nonresonance"]:
        if not row["pass"]:
            print(f"  resonant: eps={row['eps']:g} h={row['h']:g} "
                  f"sinc={[round(s, 4) for s in row['sinc']]}")
    failed = [k for k, ok in checks.items()
              if not ok and (k != "nonresonance" or strict_nonresonance)]
    return EXIT_NUMERICAL if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        spec = spec_from_config(cfg)
        if args.command == "run":
            return cmd_run(spec, cfg["out"])
        if args.command == "sweep":
            return cmd_sweep(spec, cfg["out"])
        if args.command == "energy":
            return cmd_energy(spec, cfg["out"])
        return cmd_check(spec, cfg["out"], bool(cfg["strict_nonresonance"]))
    except ConfigError as exc:
        print(f"cpdsplit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, OracleFailure) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"cpdsplit: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
