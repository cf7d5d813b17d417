"""Configuration-driven scenario runs and parameter sweeps.

A scenario is a nested mapping (stored as YAML) with the sections
``chain``, ``coupling``, ``state``, ``solver`` and ``output``.
:func:`resolve` validates it and fills in every default, so the resolved
document written next to the outputs reproduces them exactly.
"""

from __future__ import annotations

import copy
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import couplings as cpl
from . import dynamics, states
from .fiber import CALIBRATED_N_CORE, CALIBRATED_NU_MAX, FiberSpec, ModeTable, solve_dispersion

SCHEMA_VERSION = 1
WORKERS_ENV = "FIBERCOLLECTIVE_WORKERS"
SOLVER_KINDS = ("me", "mpc", "mf", "independent")
MODE_SOURCES = ("toy", "table", "solved")
QUANTITIES = ("half_decay_time", "final_excitation")

_MISSING = object()

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "name": "scenario",
    "chain": {"n": _MISSING, "spacing": None, "positions": None},
    "coupling": {
        "alpha": _MISSING,
        "include_3d": True,
        "broadening": None,
        "modes": {"source": "toy"},
    },
    "state": {"kind": "inverted", "theta": None, "beta0_bar": None, "pulse": None},
    "solver": {"kinds": ["mpc"], "t_end": 5.0, "n_samples": 400, "rtol": 1e-8,
               "atol": 1e-10, "me_max_sites": dynamics.ME_MAX_SITES},
    "output": {"bloch": False},
}
MODE_DEFAULTS = {
    "toy": {"beta_bar": 1.2, "chi": 1.0},
    "table": {"path": _MISSING},
    "solved": {"fiber": {"radius": _MISSING, "n_core": CALIBRATED_N_CORE,
                         "n_clad": 1.0, "wavelength": 0.689,
                         "nu_max": CALIBRATED_NU_MAX},
               "r_atom": 0.0, "phi_atom": 0.0},
}
PULSE_DEFAULTS = {"rabi": _MISSING, "rabi_units": "gamma", "duration": None,
                  "angle": None}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

def _merge(defaults, given, path):
    """Recursively overlay ``given`` on ``defaults``; reject unknown keys."""
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{_join(path, key)}: unknown field")
    out = {}
    for key, dval in defaults.items():
        here = _join(path, key)
        if isinstance(dval, dict):
            out[key] = _merge(dval, given.get(key), here)
        elif key in given:
            out[key] = copy.deepcopy(given[key])
        elif dval is _MISSING:
            raise ConfigError(f"{here}: required field missing")
        else:
            out[key] = copy.deepcopy(dval)
    return out


def _join(path, key):
    return f"{path}.{key}" if path else key


def _positive(value, where, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{where}: must be {'non-negative' if allow_zero else 'positive'}")
    return float(value)


def _angle(value, where):
    """Angles may be given as numbers or as strings like ``"0.95pi"``."""
    if isinstance(value, str):
        text = value.replace(" ", "").replace("*", "")
        if not text.endswith("pi"):
            raise ConfigError(f"{where}: expected a number or '<x>pi', got {value!r}")
        coef = text[:-2]
        try:
            value = (float(coef) if coef else 1.0) * math.pi
        except ValueError:
            raise ConfigError(f"{where}: cannot parse angle {value!r}") from None
    return _positive(value, where, allow_zero=True)


def resolve(raw: dict) -> dict:
    """Validate a raw config and return it with all defaults materialized."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r}")
    raw = dict(raw)
    modes_raw = dict((raw.get("coupling") or {}).get("modes") or {})
    state_raw = dict(raw.get("state") or {})
    cfg = _merge({k: v for k, v in DEFAULTS.items()},
                 {**raw, "coupling": {**(raw.get("coupling") or {}), "modes": {}},
                  "state": {**state_raw, "pulse": None}}, "")
    # mode source: exactly one branch
    source = modes_raw.pop("source", "toy")
    if source not in MODE_SOURCES:
        raise ConfigError(f"coupling.modes.source: must be one of {MODE_SOURCES}")
    cfg["coupling"]["modes"] = {"source": source,
                                **_merge(MODE_DEFAULTS[source], modes_raw,
                                         "coupling.modes")}
    if state_raw.get("pulse") is not None:
        cfg["state"]["pulse"] = _merge(PULSE_DEFAULTS, state_raw["pulse"], "state.pulse")
    _check(cfg)
    return cfg


def _check(cfg):
    ch = cfg["chain"]
    n = ch["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError("chain.n: must be an integer >= 1")
    if (ch["spacing"] is None) == (ch["positions"] is None):
        if n == 1 and ch["positions"] is None:
            ch["spacing"] = 1.0
        else:
            raise ConfigError("chain: give exactly one of spacing or positions")
    if ch["spacing"] is not None:
        ch["spacing"] = _positive(ch["spacing"], "chain.spacing")
    else:
        pos = ch["positions"]
        if not isinstance(pos, list) or len(pos) != n:
            raise ConfigError(f"chain.positions: expected a list of {n} numbers")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ConfigError("chain.positions: must be strictly increasing")

    co = cfg["coupling"]
    modes = co["modes"]
    if co["alpha"] == "geometry":
        if modes["source"] != "solved":
            raise ConfigError("coupling.alpha: 'geometry' needs coupling.modes.source: solved")
    else:
        co["alpha"] = _positive(co["alpha"], "coupling.alpha", allow_zero=True)
    if not isinstance(co["include_3d"], bool):
        raise ConfigError("coupling.include_3d: expected true or false")
    b = co["broadening"]
    if b is not None and b != "auto":
        if isinstance(b, list):
            for i, v in enumerate(b):
                _positive(v, f"coupling.broadening[{i}]", allow_zero=True)
        else:
            co["broadening"] = _positive(b, "coupling.broadening", allow_zero=True)
    if modes["source"] == "toy":
        modes["beta_bar"] = _positive(modes["beta_bar"], "coupling.modes.beta_bar")
        modes["chi"] = _positive(modes["chi"], "coupling.modes.chi", allow_zero=True)
    elif modes["source"] == "solved":
        fb = modes["fiber"]
        for key in ("radius", "n_core", "n_clad", "wavelength"):
            fb[key] = _positive(fb[key], f"coupling.modes.fiber.{key}")
        if not isinstance(fb["nu_max"], int) or fb["nu_max"] < 0:
            raise ConfigError("coupling.modes.fiber.nu_max: must be an integer >= 0")
        if fb["n_core"] <= fb["n_clad"]:
            raise ConfigError("coupling.modes.fiber.n_core: must exceed n_clad")
        modes["r_atom"] = _positive(modes["r_atom"], "coupling.modes.r_atom", allow_zero=True)
    elif not isinstance(modes["path"], str):
        raise ConfigError("coupling.modes.path: expected a file path")

    st = cfg["state"]
    if st["kind"] not in states.STATE_KINDS:
        raise ConfigError(f"state.kind: must be one of {states.STATE_KINDS}")
    if st["kind"] == "product_theta":
        if st["theta"] is None:
            raise ConfigError("state.theta: required for product_theta")
        th = _angle(st["theta"], "state.theta")
        if th > math.pi + 1e-12:
            raise ConfigError("state.theta: must lie in [0, pi]")
        st["theta"] = min(th, math.pi)
    if st["pulse"] is not None:
        p = st["pulse"]
        if st["kind"] != "ground":
            raise ConfigError("state.pulse: a pulse starts from the ground state; "
                              "set state.kind: ground")
        p["rabi"] = _positive(p["rabi"], "state.pulse.rabi")
        if p["rabi_units"] not in ("gamma", "gamma_1d"):
            raise ConfigError("state.pulse.rabi_units: must be gamma or gamma_1d")
        if (p["duration"] is None) == (p["angle"] is None):
            raise ConfigError("state.pulse: give exactly one of duration or angle")
        if p["duration"] is not None:
            p["duration"] = _positive(p["duration"], "state.pulse.duration", allow_zero=True)
        else:
            p["angle"] = _angle(p["angle"], "state.pulse.angle")

    so = cfg["solver"]
    kinds = so["kinds"]
    if isinstance(kinds, str):
        kinds = so["kinds"] = [kinds]
    if not kinds or any(k not in SOLVER_KINDS for k in kinds):
        raise ConfigError(f"solver.kinds: entries must be among {SOLVER_KINDS}")
    if len(set(kinds)) != len(kinds):
        raise ConfigError("solver.kinds: duplicate entries")
    so["t_end"] = _positive(so["t_end"], "solver.t_end")
    for key in ("rtol", "atol"):
        so[key] = _positive(so[key], f"solver.{key}")
    if not isinstance(so["n_samples"], int) or so["n_samples"] < 2:
        raise ConfigError("solver.n_samples: must be an integer >= 2")
    if "me" in kinds and n > so["me_max_sites"]:
        raise ConfigError(f"solver.kinds: me is limited to N <= {so['me_max_sites']} "
                          f"(chain.n = {n}); use mpc or mf")
    if not isinstance(cfg["output"]["bloch"], bool):
        raise ConfigError("output.bloch: expected true or false")
    if not isinstance(cfg["name"], str) or not cfg["name"]:
        raise ConfigError("name: expected a non-empty string")


def set_dotted(cfg: dict, key: str, value) -> None:
    """Set ``a.b.c`` inside a nested mapping, creating levels as needed."""
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(f"{key}: {part} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str):
    """``key=value`` with the value parsed as YAML (numbers, lists, ...)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


# ----------------------------------------------------------------------
# scenario config and run
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """A validated, fully resolved scenario."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict, overrides=()) -> "ScenarioConfig":
        raw = copy.deepcopy(raw)
        for key, value in overrides:
            set_dotted(raw, key, value)
        return cls(resolve(raw))

    @classmethod
    def load(cls, path, overrides=()) -> "ScenarioConfig":
        with open(path) as f:
            raw = yaml.safe_load(f)
        cfg = cls.from_dict(raw, overrides)
        modes = cfg.data["coupling"]["modes"]
        if modes["source"] == "table" and not os.path.isabs(modes["path"]):
            modes["path"] = str(Path(path).parent / modes["path"])
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def solvers(self) -> list[str]:
        return list(self.data["solver"]["kinds"])

    # builders
    def chain(self) -> cpl.EmitterChain:
        ch = self.data["chain"]
        if ch["positions"] is not None:
            return cpl.EmitterChain(np.asarray(ch["positions"], float))
        return cpl.EmitterChain.regular(ch["n"], ch["spacing"])

    def fiber_spec(self) -> FiberSpec | None:
        modes = self.data["coupling"]["modes"]
        if modes["source"] != "solved":
            return None
        return FiberSpec(**modes["fiber"])

    def mode_table(self) -> ModeTable:
        modes = self.data["coupling"]["modes"]
        if modes["source"] == "toy":
            return ModeTable.single(modes["beta_bar"], modes["chi"])
        if modes["source"] == "table":
            return ModeTable.load(modes["path"])
        return solve_dispersion(self.fiber_spec(), r_atom=modes["r_atom"],
                                phi_atom=modes["phi_atom"])

    def coupling_params(self, table: ModeTable | None = None) -> cpl.CouplingParams:
        co = self.data["coupling"]
        table = self.mode_table() if table is None else table
        alpha = co["alpha"]
        if alpha == "geometry":
            alpha = cpl.alpha_from_geometry(self.fiber_spec())
        return cpl.CouplingParams(alpha=alpha, modes=table, include_3d=co["include_3d"],
                                  broadening=co["broadening"])

    def initial_state(self, chain, table) -> states.PreparedState:
        st = self.data["state"]
        return states.make_state(st["kind"], chain.n, chain, theta=st["theta"],
                                 beta0_bar=st["beta0_bar"], modes=table)

    def pulse(self, params: cpl.CouplingParams) -> states.PulseSpec | None:
        p = self.data["state"]["pulse"]
        if p is None:
            return None
        rabi = p["rabi"] * (params.alpha if p["rabi_units"] == "gamma_1d" else 1.0)
        if p["duration"] is not None:
            return states.PulseSpec(rabi, p["duration"])
        return states.PulseSpec.for_angle(p["angle"], rabi)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    coupling: cpl.CouplingSet
    trajectories: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


def _version() -> str:
    from . import __version__
    return __version__


def _solver_options(cfg: ScenarioConfig, kind: str) -> dict:
    so = cfg.data["solver"]
    opts = {"n_samples": so["n_samples"], "keep_bloch": cfg.data["output"]["bloch"]}
    if kind != "independent":
        opts.update(rtol=so["rtol"], atol=so["atol"])
    if kind == "me":
        opts["max_sites"] = so["me_max_sites"]
    return opts


def run_scenario(config: ScenarioConfig, out_dir=None, solvers=None) -> ScenarioResult:
    """Build couplings, prepare the state and run every requested solver.

    With ``out_dir`` set, writes ``<name>_<solver>.dat`` per solver plus the
    resolved config as ``<name>_resolved.yaml``.
    """
    chain = config.chain()
    table = config.mode_table()
    params = config.coupling_params(table)
    coupling = cpl.build(chain, params)
    state0 = config.initial_state(chain, table)
    pulse = config.pulse(params)
    t_end = config.data["solver"]["t_end"]
    result = ScenarioResult(config, coupling)
    for kind in solvers or config.solvers:
        opts = _solver_options(config, kind)
        start = state0
        if pulse is not None:
            pulse_opts = {k: v for k, v in opts.items() if k in ("rtol", "atol", "max_sites")}
            start = states.simulate_pulse(coupling, pulse, kind, **pulse_opts)
        if kind == "independent":
            traj = dynamics.independent_evolve(coupling, start, t_end, **opts)
        else:
            traj = dynamics.evolve(kind, coupling, start, t_end, **opts)
        result.trajectories[kind] = traj
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = {"scenario": config.name, "version": _version(), "N": chain.n,
                  "alpha": params.alpha, "gamma_total": coupling.gamma_total,
                  "state": config.data["state"]["kind"]}
        for kind, traj in result.trajectories.items():
            path = out / f"{config.name}_{kind}.dat"
            traj.save(path, header)
            result.files.append(path)
        echo = out / f"{config.name}_resolved.yaml"
        echo.write_text(config.to_yaml())
        result.files.append(echo)
    return result


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------

def _axis_values(spec, where):
    if isinstance(spec, list):
        if not spec:
            raise ConfigError(f"{where}: axis must not be empty")
        return spec
    if isinstance(spec, dict) and set(spec) == {"log"}:
        lo, hi, num = spec["log"]
        if not (lo > 0 and hi > lo and int(num) >= 1):
            raise ConfigError(f"{where}: log axis needs 0 < lo < hi and num >= 1")
        return [float(v) for v in np.geomspace(lo, hi, int(num))]
    if isinstance(spec, dict) and set(spec) == {"log_int"}:
        lo, hi, num = spec["log_int"]
        vals = sorted({int(round(v)) for v in np.geomspace(lo, hi, int(num))})
        if not vals or vals[0] < 1:
            raise ConfigError(f"{where}: log_int axis needs integers >= 1")
        return vals
    raise ConfigError(f"{where}: expected a list or {{log: [lo, hi, num]}}")


@dataclass(frozen=True)
class SweepSpec:
    """A scenario template swept over a grid of dotted-path axes.

    ``checks`` optionally asserts monotonicity of the quantity along one
    axis, e.g. ``{axis: chain.n, trend: decreasing}``.
    """

    template: dict
    axes: dict
    quantity: str = "half_decay_time"
    solver: str = "mpc"
    budget: int = 200
    checks: tuple = ()

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("sweep.axes: at least one axis is required")
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"sweep.quantity: must be one of {QUANTITIES}")
        if self.solver not in SOLVER_KINDS:
            raise ConfigError(f"sweep.solver: must be one of {SOLVER_KINDS}")
        values = {k: _axis_values(v, f"sweep.axes.{k}") for k, v in self.axes.items()}
        object.__setattr__(self, "axes", values)
        size = int(np.prod([len(v) for v in values.values()]))
        if size > self.budget:
            raise ConfigError(f"sweep: {size} grid points exceed the budget of {self.budget}")
        for chk in self.checks:
            if chk.get("axis") not in values or chk.get("trend") not in ("decreasing", "increasing"):
                raise ConfigError("sweep.checks: need axis (one of the sweep axes) and "
                                  "trend increasing|decreasing")
        # validate the template with the first grid point
        self.point_config(self.points()[0])

    @classmethod
    def from_dict(cls, raw: dict, overrides=()) -> "SweepSpec":
        raw = copy.deepcopy(raw)
        sweep = raw.pop("sweep", None)
        if not isinstance(sweep, dict):
            raise ConfigError("sweep: section missing")
        for key, value in overrides:
            if key.startswith("sweep."):
                set_dotted(sweep, key[len("sweep."):], value)
            else:
                set_dotted(raw, key, value)
        allowed = {"axes", "quantity", "solver", "budget", "checks"}
        unknown = set(sweep) - allowed
        if unknown:
            raise ConfigError(f"sweep.{sorted(unknown)[0]}: unknown field")
        return cls(template=raw, axes=sweep.get("axes") or {},
                   quantity=sweep.get("quantity", "half_decay_time"),
                   solver=sweep.get("solver", "mpc"), budget=sweep.get("budget", 200),
                   checks=tuple(sweep.get("checks") or ()))

    @classmethod
    def load(cls, path, overrides=()) -> "SweepSpec":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f), overrides)

    def points(self) -> list[dict]:
        keys = list(self.axes)
        grids = np.meshgrid(*[np.arange(len(self.axes[k])) for k in keys], indexing="ij")
        flat = [g.ravel() for g in grids]
        return [{k: self.axes[k][int(f[i])] for k, f in zip(keys, flat)}
                for i in range(flat[0].size)]

    def point_config(self, point: dict) -> ScenarioConfig:
        overrides = list(point.items()) + [("solver.kinds", [self.solver])]
        return ScenarioConfig.from_dict(self.template, overrides)

    def to_dict(self) -> dict:
        return {**self.template,
                "sweep": {"axes": self.axes, "quantity": self.quantity,
                          "solver": self.solver, "budget": self.budget,
                          "checks": list(self.checks)}}


def evaluate_point(sweep: SweepSpec, point: dict):
    """Return ``(value, status)`` for one grid point; never raises."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = sweep.point_config(point)
            traj = run_scenario(cfg).trajectories[sweep.solver]
        if sweep.quantity == "half_decay_time":
            value = traj.half_decay_time()
            return (value, "ok") if value is not None else (None, "not-reached")
        return float(traj.sz[-1]), "ok"
    except Exception as exc:  # recorded in-row, sweep continues
        return None, f"error:{type(exc).__name__}:{str(exc).replace(chr(9), ' ')[:200]}"


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_done(path: Path, ncols: int) -> dict:
    done = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != ncols or cols[-1] != "ok" and cols[-1] != "not-reached":
            continue  # partial line or failed point: recompute
        done[int(cols[0])] = line
    return done


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(sweep: SweepSpec, out_path, workers: int | None = None) -> Path:
    """Evaluate every grid point and write one tab-separated row per point.

    Rows are flushed as they complete so an interrupted sweep can be resumed:
    rows already present with status ``ok`` or ``not-reached`` are skipped.
    The finished file is rewritten in grid order, so it does not depend on
    completion order or worker count.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    points = sweep.points()
    keys = list(sweep.axes)
    header = ("# sweep quantity: " + sweep.quantity + "\n# solver: " + sweep.solver
              + "\n# version: " + _version() + "\n# columns: index\t" + "\t".join(keys)
              + "\t" + sweep.quantity + "\tstatus\n")
    ncols = len(keys) + 3
    done = _read_done(out_path, ncols)

    def row(i, value, status):
        vals = [str(i)] + [_fmt(points[i][k]) for k in keys] + [_fmt(value), status]
        return "\t".join(vals)

    todo = [i for i in range(len(points)) if i not in done]
    workers = workers or default_workers()
    with open(out_path, "a" if done else "w") as f:
        if not done:
            f.write(header)
        f.flush()
        if workers <= 1 or len(todo) <= 1:
            for i in todo:
                done[i] = row(i, *evaluate_point(sweep, points[i]))
                f.write(done[i] + "\n")
                f.flush()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(evaluate_point, sweep, points[i]): i for i in todo}
                for fut in as_completed(futures):
                    i = futures[fut]
                    done[i] = row(i, *fut.result())
                    f.write(done[i] + "\n")
                    f.flush()
    out_path.write_text(header + "".join(done[i] + "\n" for i in range(len(points))))
    return out_path


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return yaml.safe_load(text)  # list-valued axes such as chain.positions


def read_sweep(path) -> list[dict]:
    """Parse a sweep table back into dictionaries."""
    rows, cols = [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# columns:"):
            cols = line[len("# columns:"):].strip().split("\t")
        elif line and not line.startswith("#"):
            vals = line.split("\t")
            rows.append({c: v if c == "status" else _number(v) for c, v in zip(cols, vals)})
    return rows


def check_trends(sweep: SweepSpec, rows: list[dict]) -> list[str]:
    """Evaluate the sweep's declared monotonicity checks; return failures."""
    failures = []
    for chk in sweep.checks:
        axis, trend = chk["axis"], chk["trend"]
        others = [k for k in sweep.axes if k != axis]
        groups = {}
        for r in rows:
            groups.setdefault(tuple(r[k] for k in others), []).append(r)
        for key, grp in groups.items():
            grp = sorted(grp, key=lambda r: r[axis])
            vals = [r[sweep.quantity] for r in grp]
            diffs = np.diff(vals)
            ok = np.all(diffs < 0) if trend == "decreasing" else np.all(diffs > 0)
            if not ok or any(r["status"] != "ok" for r in grp):
                failures.append(f"{sweep.quantity} not strictly {trend} in {axis} at "
                                f"{dict(zip(others, key))}: {vals}")
    return failures
