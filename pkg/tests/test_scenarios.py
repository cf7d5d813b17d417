import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from fibercollective import scenarios
from fibercollective.cli import main
from fibercollective.fiber import ModeTable
from fibercollective.scenarios import (ConfigError, ScenarioConfig, SweepSpec, check_trends,
                                       parse_override, read_sweep, resolve, run_scenario,
                                       run_sweep)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "name": "small",
    "chain": {"n": 3, "spacing": 0.59},
    "coupling": {"alpha": 0.5},
    "state": {"kind": "inverted"},
    "solver": {"kinds": ["mpc", "independent"], "t_end": 1.0, "n_samples": 21},
}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

def test_resolve_fills_defaults():
    cfg = resolve(SMALL)
    assert cfg["coupling"]["modes"] == {"source": "toy", "beta_bar": 1.2, "chi": 1.0}
    assert cfg["coupling"]["include_3d"] is True
    assert cfg["solver"]["rtol"] == 1e-8
    assert cfg["schema_version"] == scenarios.SCHEMA_VERSION


@pytest.mark.parametrize("patch, field", [
    ({"chain": {"n": 0, "spacing": 0.5}}, "chain.n"),
    ({"chain": {"n": 3}}, "chain"),
    ({"chain": {"n": 2, "positions": [0.0, -1.0]}}, "chain.positions"),
    ({"coupling": {"alpha": -1}}, "coupling.alpha"),
    ({"coupling": {"alpha": "lots"}}, "coupling.alpha"),
    ({"coupling": {"alpha": "geometry"}}, "coupling.alpha"),
    ({"coupling": {"alpha": 0.1, "colour": 1}}, "coupling.colour"),
    ({"coupling": {"alpha": 0.1, "modes": {"source": "magic"}}}, "coupling.modes.source"),
    ({"coupling": {"alpha": 0.1, "modes": {"source": "toy", "radius": 1}}},
     "coupling.modes.radius"),
    ({"coupling": {"alpha": 0.1, "modes": {"source": "solved"}}},
     "coupling.modes.fiber.radius"),
    ({"coupling": {"alpha": 0.1, "modes": {"source": "solved",
                                           "fiber": {"radius": 1, "n_core": 0.9}}}},
     "coupling.modes.fiber.n_core"),
    ({"state": {"kind": "squeezed"}}, "state.kind"),
    ({"state": {"kind": "product_theta"}}, "state.theta"),
    ({"state": {"kind": "product_theta", "theta": "1.5pi"}}, "state.theta"),
    ({"state": {"kind": "product_theta", "theta": "halfpi"}}, "state.theta"),
    ({"state": {"kind": "inverted", "pulse": {"rabi": 1, "angle": 1}}}, "state.pulse"),
    ({"state": {"kind": "ground", "pulse": {"rabi": 1}}}, "state.pulse"),
    ({"state": {"kind": "ground", "pulse": {"rabi": 1, "angle": 1, "rabi_units": "hz"}}},
     "state.pulse.rabi_units"),
    ({"solver": {"kinds": ["exact"]}}, "solver.kinds"),
    ({"solver": {"kinds": ["mf", "mf"]}}, "solver.kinds"),
    ({"solver": {"t_end": 0}}, "solver.t_end"),
    ({"solver": {"n_samples": 1}}, "solver.n_samples"),
    ({"output": {"bloch": "yes"}}, "output.bloch"),
    ({"schema_version": 7}, "schema_version"),
    ({"extra": 1}, "extra"),
])
def test_validation_names_the_field(patch, field):
    raw = {**SMALL, **patch}
    with pytest.raises(ConfigError) as err:
        resolve(raw)
    assert str(err.value).startswith(field)


def test_me_cap_enforced_at_validation():
    raw = {**SMALL, "chain": {"n": 13, "spacing": 0.59}, "solver": {"kinds": ["me"]}}
    with pytest.raises(ConfigError, match="use mpc or mf"):
        resolve(raw)


def test_angles_accept_pi_strings():
    raw = {**SMALL, "state": {"kind": "product_theta", "theta": "0.95pi"}}
    assert resolve(raw)["state"]["theta"] == pytest.approx(0.95 * np.pi)
    raw["state"]["theta"] = "pi"
    assert resolve(raw)["state"]["theta"] == np.pi


def test_overrides():
    assert parse_override("coupling.alpha=0.3") == ("coupling.alpha", 0.3)
    assert parse_override("solver.kinds=[mf, me]") == ("solver.kinds", ["mf", "me"])
    with pytest.raises(ConfigError):
        parse_override("coupling.alpha")
    cfg = ScenarioConfig.from_dict(SMALL, [("coupling.alpha", 0.9), ("chain.n", 4)])
    assert cfg.data["coupling"]["alpha"] == 0.9 and cfg.chain().n == 4
    assert SMALL["coupling"]["alpha"] == 0.5  # template untouched
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(SMALL, [("chain.n.value", 1)])


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    raw = yaml.safe_load(path.read_text())
    if "sweep" in raw:
        assert len(SweepSpec.load(path).points()) >= 2
    else:
        ScenarioConfig.load(path)


# ----------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------

def test_run_writes_outputs_and_echo(tmp_path):
    cfg = ScenarioConfig.from_dict(SMALL)
    result = run_scenario(cfg, tmp_path)
    names = sorted(p.name for p in result.files)
    assert names == ["small_independent.dat", "small_mpc.dat", "small_resolved.yaml"]
    echo = ScenarioConfig.from_dict(yaml.safe_load((tmp_path / "small_resolved.yaml").read_text()))
    assert echo.data == cfg.data
    again = run_scenario(echo, tmp_path / "again")
    for name in ("small_mpc.dat", "small_independent.dat"):
        assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_output_header(tmp_path):
    run_scenario(ScenarioConfig.from_dict(SMALL), tmp_path)
    head = [l for l in (tmp_path / "small_mpc.dat").read_text().splitlines() if l.startswith("#")]
    assert "# scenario: small" in head and "# N: 3" in head
    assert "# columns: t sz" in head
    assert np.loadtxt(tmp_path / "small_mpc.dat").shape == (21, 2)


def test_zero_alpha_with_empty_table(tmp_path):
    table = tmp_path / "empty.dat"
    ModeTable().save(table)
    raw = {**SMALL, "coupling": {"alpha": 0.0, "modes": {"source": "table", "path": "empty.dat"}},
           "solver": {"kinds": ["mf"], "t_end": 1.0, "n_samples": 11}}
    cfg = ScenarioConfig.load(write_yaml(tmp_path / "c.yaml", raw))
    with pytest.warns(RuntimeWarning, match="no coupled guided modes"):
        res = run_scenario(cfg)
    assert res.coupling.gamma_total == 1.0
    np.testing.assert_allclose(res.trajectories["mf"].sz[-1], 3 * np.exp(-1.0), rtol=1e-7)


def test_table_paths_relative_to_config(tmp_path):
    (tmp_path / "sub").mkdir()
    ModeTable.single(1.2, 1.0).save(tmp_path / "sub" / "one.dat")
    raw = {**SMALL, "coupling": {"alpha": 0.5, "modes": {"source": "table", "path": "one.dat"}}}
    cfg = ScenarioConfig.load(write_yaml(tmp_path / "sub" / "c.yaml", raw))
    toy = run_scenario(ScenarioConfig.from_dict(SMALL))
    res = run_scenario(cfg)
    np.testing.assert_allclose(res.coupling.gamma, toy.coupling.gamma, rtol=1e-12)


def test_pulse_scenario():
    raw = {**SMALL, "chain": {"n": 2, "spacing": 0.59},
           "state": {"kind": "ground", "pulse": {"rabi": 50.0, "angle": "pi"}},
           "solver": {"kinds": ["me", "mpc", "independent"], "t_end": 0.5, "n_samples": 11}}
    res = run_scenario(ScenarioConfig.from_dict(raw))
    # a short strong pulse nearly inverts both atoms
    for traj in res.trajectories.values():
        assert traj.sz[0] > 1.9
    assert res.trajectories["mpc"].sz == pytest.approx(res.trajectories["me"].sz, abs=1e-6)


def test_geometry_alpha_from_solved_fiber():
    raw = {**SMALL, "coupling": {"alpha": "geometry",
                                 "modes": {"source": "solved", "fiber": {"radius": 1.0}}},
           "solver": {"kinds": ["mf"], "t_end": 0.5, "n_samples": 5}}
    cfg = ScenarioConfig.from_dict(raw)
    params = cfg.coupling_params()
    assert len(params.modes) == 6
    from fibercollective.couplings import alpha_from_geometry
    assert params.alpha == alpha_from_geometry(cfg.fiber_spec())


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------

SWEEP = {**SMALL, "solver": {"t_end": 3.0, "n_samples": 301},
         "sweep": {"axes": {"coupling.alpha": [0.0, 0.5, 1.0], "chain.n": [2, 4]},
                   "solver": "mpc", "checks": [{"axis": "coupling.alpha",
                                                "trend": "decreasing"}]}}


def test_sweep_spec_validation():
    with pytest.raises(ConfigError, match="budget"):
        SweepSpec.from_dict({**SWEEP, "sweep": {**SWEEP["sweep"], "budget": 5}})
    with pytest.raises(ConfigError, match="sweep.axes"):
        SweepSpec.from_dict({**SWEEP, "sweep": {"axes": {}}})
    with pytest.raises(ConfigError, match="sweep.speed"):
        SweepSpec.from_dict({**SWEEP, "sweep": {**SWEEP["sweep"], "speed": 1}})
    with pytest.raises(ConfigError, match="chain.n"):
        SweepSpec.from_dict({**SWEEP, "sweep": {"axes": {"chain.n": [0, 1]}}})
    spec = SweepSpec.from_dict({**SWEEP, "sweep": {"axes": {"chain.n": {"log_int": [2, 64, 6]},
                                                          "coupling.alpha": {"log": [0.01, 1, 3]}}}})
    assert spec.axes["chain.n"] == [2, 4, 8, 16, 32, 64]
    assert spec.axes["coupling.alpha"] == pytest.approx([0.01, 0.1, 1.0])


def test_sweep_runs_resumes_and_is_order_stable(tmp_path):
    spec = SweepSpec.from_dict(SWEEP)
    out = run_sweep(spec, tmp_path / "s.tsv")
    rows = read_sweep(out)
    assert [r["index"] for r in rows] == list(range(6))
    assert all(r["status"] == "ok" for r in rows)
    assert check_trends(spec, rows) == []
    first = out.read_text()

    # simulate an interruption: drop two rows, corrupt one, then resume
    lines = first.splitlines(keepends=True)
    body = [l for l in lines if not l.startswith("#")]
    head = [l for l in lines if l.startswith("#")]
    broken = head + body[:2] + [body[2].replace("ok", "error:Boom:x")] + body[3:4]
    out.write_text("".join(broken))
    calls = []
    original = scenarios.evaluate_point

    def counting(sweep, point):
        calls.append(point)
        return original(sweep, point)

    scenarios.evaluate_point = counting
    try:
        run_sweep(spec, out)
    finally:
        scenarios.evaluate_point = original
    assert len(calls) == 3
    assert out.read_text() == first


def test_sweep_parallel_matches_serial(tmp_path):
    spec = SweepSpec.from_dict({**SWEEP, "sweep": {**SWEEP["sweep"],
                                                   "axes": {"coupling.alpha": [0.0, 1.0]}}})
    a = run_sweep(spec, tmp_path / "a.tsv", workers=1).read_text()
    b = run_sweep(spec, tmp_path / "b.tsv", workers=2).read_text()
    assert a == b


def test_sweep_error_rows_do_not_stop_the_sweep(tmp_path):
    raw = {**SWEEP, "solver": {"t_end": 1.0, "n_samples": 11, "kinds": ["mf"]},
           "sweep": {"axes": {"chain.positions": [[0.0, 1.0, 2.0], [0.0, 0.0, 1.0]]},
                     "solver": "mf"}}
    raw["chain"] = {"n": 3, "positions": [0.0, 1.0, 2.0]}
    rows = read_sweep(run_sweep(SweepSpec.from_dict(raw), tmp_path / "e.tsv"))
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("error:ConfigError:chain.positions")
    assert np.isnan(rows[1]["half_decay_time"])


def test_check_trends_reports_failures():
    spec = SweepSpec.from_dict({**SWEEP, "sweep": {**SWEEP["sweep"],
                                                   "axes": {"coupling.alpha": [0.0, 1.0]}}})
    rows = [{"coupling.alpha": 0.0, "half_decay_time": 0.3, "status": "ok"},
            {"coupling.alpha": 1.0, "half_decay_time": 0.4, "status": "ok"}]
    assert len(check_trends(spec, rows)) == 1


# ----------------------------------------------------------------------
# command line
# ----------------------------------------------------------------------

def test_cli_validate(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL)
    assert main(["validate", "--config", str(cfg), "--quiet"]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    assert main(["validate", "--config", str(CONFIGS / "sweep_n_alpha.yaml"), "--quiet"]) == 0


def test_cli_config_error_is_json(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL)
    code = main(["validate", "--config", str(cfg), "--override", "coupling.alpha=-2", "--quiet"])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["message"].startswith("coupling.alpha")
    assert main(["run", "--quiet"]) == 2


def test_cli_run(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL)
    code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--solver", "mf",
                 "--seed", "3", "--quiet"])
    assert code == 0
    files = capsys.readouterr().out.split()
    assert [Path(f).name for f in files] == ["small_mf.dat", "small_resolved.yaml"]


def test_cli_sweep(tmp_path, capsys):
    raw = {**SWEEP, "sweep": {**SWEEP["sweep"], "axes": {"coupling.alpha": [0.0, 1.0]}}}
    cfg = write_yaml(tmp_path / "s.yaml", raw)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 0
    out = Path(capsys.readouterr().out.strip())
    assert out.name == "small_sweep.tsv" and len(read_sweep(out)) == 2
    code = main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "x"), "--quiet",
                 "--override", "sweep.checks=[{axis: coupling.alpha, trend: increasing}]"])
    assert code == 1


def test_cli_modes_and_kernels(tmp_path, capsys):
    assert main(["modes", "--radius", "1.0", "--out", str(tmp_path), "--quiet"]) == 0
    table = ModeTable.load(capsys.readouterr().out.strip())
    assert len(table) == 6
    assert main(["modes", "--scan", "0.2", "1.0", "3", "--out", str(tmp_path), "--quiet"]) == 0
    rows = np.loadtxt(capsys.readouterr().out.strip(), ndmin=2)
    assert rows.shape[1] == 4
    assert main(["kernels", "--points", "7", "--out", str(tmp_path), "--quiet"]) == 0
    assert np.loadtxt(capsys.readouterr().out.strip()).shape == (7, 5)
    assert main(["modes", "--out", str(tmp_path), "--quiet"]) == 2


def test_module_entry_point(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL)
    proc = subprocess.run([sys.executable, "-m", "fibercollective", "validate", "--config",
                           str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"
