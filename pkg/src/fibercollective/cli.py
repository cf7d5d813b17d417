"""Command line interface: ``python -m fibercollective <command>``.

Commands
--------
modes      solve the guided modes of a fiber, or scan the dispersion
kernels    tabulate the coupling kernels against xi
run        run one scenario config
sweep      run a parameter sweep config
validate   check a config without running it
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import couplings as cpl
from . import scenarios
from .fiber import CALIBRATED_N_CORE, CALIBRATED_NU_MAX, FiberSpec, dispersion_scan, solve_dispersion

log = logging.getLogger("fibercollective")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override, repeatable")
    common.add_argument("--seed", type=int, default=None,
                        help="reserved; no stochastic components yet")
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true")
    verb.add_argument("--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fibercollective", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("modes", parents=[common], help="guided-mode solve or dispersion scan")
    m.add_argument("--radius", type=float, help="core radius (um); overrides the config")
    m.add_argument("--n-core", type=float, default=None)
    m.add_argument("--wavelength", type=float, default=0.689)
    m.add_argument("--nu-max", type=int, default=None)
    m.add_argument("--r-atom", type=float, default=0.0)
    m.add_argument("--scan", nargs=3, type=float, metavar=("A_MIN", "A_MAX", "NUM"),
                   help="dispersion scan over a/lambda instead of a single solve")

    k = sub.add_parser("kernels", parents=[common], help="coupling kernel scan")
    k.add_argument("--xi-min", type=float, default=0.05)
    k.add_argument("--xi-max", type=float, default=30.0)
    k.add_argument("--points", type=int, default=600)

    r = sub.add_parser("run", parents=[common], help="run a scenario")
    r.add_argument("--solver", action="append", choices=scenarios.SOLVER_KINDS,
                   help="solver(s) to run, overriding solver.kinds")

    s = sub.add_parser("sweep", parents=[common], help="run a sweep")
    s.add_argument("--solver", choices=scenarios.SOLVER_KINDS)
    s.add_argument("--workers", type=int, default=None,
                   help=f"parallel workers (default: ${scenarios.WORKERS_ENV} or 1)")

    sub.add_parser("validate", parents=[common], help="validate a config")
    return p


def _overrides(args):
    pairs = [scenarios.parse_override(o) for o in args.override]
    if getattr(args, "solver", None):
        key = "sweep.solver" if args.command == "sweep" else "solver.kinds"
        pairs.append((key, args.solver))
    return pairs


def _load_raw(path):
    if path is None:
        raise scenarios.ConfigError("--config: required for this command")
    with open(path) as f:
        return yaml.safe_load(f)


def _is_sweep(raw) -> bool:
    return isinstance(raw, dict) and "sweep" in raw


def cmd_validate(args) -> int:
    raw = _load_raw(args.config)
    if _is_sweep(raw):
        sw = scenarios.SweepSpec.from_dict(raw, _overrides(args))
        log.info("valid sweep: %d points", len(sw.points()))
    else:
        cfg = scenarios.ScenarioConfig.from_dict(raw, _overrides(args))
        log.info("valid scenario %s", cfg.name)
    print("ok")
    return 0


def _require_config(args):
    if args.config is None:
        raise scenarios.ConfigError("--config: required for this command")


def cmd_run(args) -> int:
    _require_config(args)
    cfg = scenarios.ScenarioConfig.load(args.config, _overrides(args))
    result = scenarios.run_scenario(cfg, args.out)
    for kind, traj in result.trajectories.items():
        t_half = traj.half_decay_time()
        log.info("%s: half-decay time %s", kind,
                 "not reached" if t_half is None else f"{t_half:.6f}")
    for path in result.files:
        print(path)
    return 0


def cmd_sweep(args) -> int:
    _require_config(args)
    sw = scenarios.SweepSpec.load(args.config, _overrides(args))
    name = _load_raw(args.config).get("name", Path(args.config).stem)
    out = scenarios.run_sweep(sw, Path(args.out) / f"{name}_sweep.tsv", args.workers)
    print(out)
    failures = scenarios.check_trends(sw, scenarios.read_sweep(out))
    for msg in failures:
        log.error("check failed: %s", msg)
    return 1 if failures else 0


def _fiber_from_args(args) -> tuple[FiberSpec, float]:
    r_atom = args.r_atom
    if args.config:
        cfg = scenarios.ScenarioConfig.load(args.config, _overrides(args))
        spec = cfg.fiber_spec()
        if spec is None:
            raise scenarios.ConfigError("coupling.modes.source: modes needs a solved fiber")
        r_atom = cfg.data["coupling"]["modes"]["r_atom"]
    elif args.radius is None:
        raise scenarios.ConfigError("--radius: required without --config")
    else:
        spec = FiberSpec(args.radius, args.n_core or CALIBRATED_N_CORE, 1.0, args.wavelength,
                         CALIBRATED_NU_MAX if args.nu_max is None else args.nu_max)
    if args.radius is not None and args.config:
        spec = FiberSpec(args.radius, spec.n_core, spec.n_clad, spec.wavelength, spec.nu_max)
    return spec, r_atom


def cmd_modes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scan:
        lo, hi, num = args.scan
        n_core = args.n_core or CALIBRATED_N_CORE
        nu_max = CALIBRATED_NU_MAX if args.nu_max is None else args.nu_max
        rows = dispersion_scan(n_core, np.linspace(lo, hi, int(num)), nu_max=nu_max)
        path = out / "dispersion_scan.dat"
        np.savetxt(path, rows, fmt=["%.6f", "%d", "%d", "%.12f"],
                   header=f"n_core={n_core} nu_max={nu_max}\ncolumns: a_over_lambda nu root beta_bar")
    else:
        spec, r_atom = _fiber_from_args(args)
        table = solve_dispersion(spec, r_atom=r_atom)
        path = out / f"modes_a{spec.radius:g}.dat"
        table.save(path)
        log.info("%d guided modes, %d coupled", len(table), len(table.coupled()))
    print(path)
    return 0


def cmd_kernels(args) -> int:
    if args.config:
        cfg = scenarios.ScenarioConfig.load(args.config, _overrides(args))
        params = cfg.coupling_params()
    else:
        params = cpl.CouplingParams(alpha=1.0)
    xi = np.linspace(args.xi_min, args.xi_max, args.points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "kernels.dat"
    np.savetxt(path, cpl.kernel_scan(xi, params), fmt="%.12e",
               header=f"alpha={params.alpha} modes={len(params.modes)} "
                      f"broadened={params.broadened}\n"
                      "columns: xi omega_3d gamma_3d omega_1d gamma_1d")
    print(path)
    return 0


COMMANDS = {"modes": cmd_modes, "kernels": cmd_kernels, "run": cmd_run,
            "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if args.seed is not None:
        log.debug("--seed %d accepted; all computations are deterministic", args.seed)
    try:
        return COMMANDS[args.command](args)
    except (scenarios.ConfigError, FileNotFoundError, yaml.YAMLError) as exc:
        _report(exc)
        return 2
    except Exception as exc:
        _report(exc)
        return 1


def _report(exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
