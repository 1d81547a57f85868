import json

import numpy as np
import pytest

from pdeddp import cli
from pdeddp.errors import ConfigError

TINY_CONFIG = """
[model]
kind = "heat"
epsilon = 0.02

[grid]
n_nodes = 12
length = 1.0

[time]
tf = 0.05
n_steps = 40

[cost]
q = 10.0
q_f = 10.0
r_d = 0.5
outer_target = 1.0
central_target = 0.5

[solver]
max_iters = 5
gamma_d = 1.0
tol_rel_cost = 1e-6
mu = 0.0
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG)
    return path


def test_missing_file_and_sections(tmp_path):
    with pytest.raises(ConfigError):
        cli.load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nkind = 'heat'\n")
    with pytest.raises(ConfigError, match=r"\[grid\]"):
        cli.build_experiment(cli.load_config(bad))


def test_malformed_values_are_diagnosed(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(TINY_CONFIG.replace('kind = "heat"', 'kind = "wave"'))
    with pytest.raises(ConfigError, match="model.kind"):
        cli.build_experiment(cli.load_config(path))
    path.write_text(TINY_CONFIG.replace("n_nodes = 12", "n_nodes = 2"))
    with pytest.raises(ConfigError, match="grid"):
        cli.build_experiment(cli.load_config(path))
    path.write_text(TINY_CONFIG.replace("tf = 0.05", "tf = -1.0"))
    with pytest.raises(ConfigError, match="time"):
        cli.build_experiment(cli.load_config(path))
    path.write_text("not toml at [all")
    with pytest.raises(ConfigError, match="parse"):
        cli.load_config(path)


def test_run_exit_codes(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(tiny_config), "--output-dir", str(out)]) == 0
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 2
    # divergent configuration: unstable step for the diffusion stiffness
    div = tmp_path / "div.toml"
    div.write_text(TINY_CONFIG.replace("epsilon = 0.02", "epsilon = 40.0")
                   .replace("tf = 0.05", "tf = 4.0"))
    assert cli.main(["run", str(div), "--output-dir", str(tmp_path / "d")]) == 3


def test_outputs_deterministic_and_round_trip(tiny_config, tmp_path):
    out1 = tmp_path / "a"
    assert cli.run(str(tiny_config), str(out1)) == 0
    first = {name: (out1 / name).read_bytes()
             for name in ("trajectory.csv", "control.csv", "convergence.csv", "meta.json")}
    assert cli.run(str(tiny_config), str(out1)) == 0
    for name, payload in first.items():
        assert (out1 / name).read_bytes() == payload, name

    t, x, v = cli.load_trajectory_csv(out1 / "trajectory.csv")
    exp = cli.build_experiment(cli.load_config(tiny_config))
    n = exp.grid.n_nodes
    assert len(t) == (exp.n_steps + 1) * n
    # values round-trip exactly through repr formatting
    states = v.reshape(exp.n_steps + 1, n)
    from pdeddp.solver import ddp_solve

    sol = ddp_solve(exp.model, exp.spec, exp.X0,
                    np.zeros((exp.n_steps, exp.model.n_act)), exp.cfg, exp.grid,
                    exp.dt, exp.n_steps)
    assert np.array_equal(states, sol.trajectory.states)

    tc, act, uv = cli.load_control_csv(out1 / "control.csv")
    assert np.array_equal(uv.reshape(exp.n_steps, -1), sol.U)
    cols = cli.load_convergence_csv(out1 / "convergence.csv")
    assert len(cols) == 7
    assert np.array_equal(cols[1], [r.total_cost for r in sol.history])
    meta = json.loads((out1 / "meta.json").read_text())
    assert meta["grid"]["n_nodes"] == n
    assert meta["solver"]["scheme"] == "euler"


def test_scheme_override(tiny_config, tmp_path):
    assert cli.run(str(tiny_config), str(tmp_path / "o"), scheme="semi-implicit") == 0
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["solver"]["scheme"] == "semi_implicit"


def test_bundled_configs_resolve_and_build():
    for name in ("heat_reaching", "burgers_reaching", "burgers_annealing"):
        exp = cli.build_experiment(cli.load_config(name))
        assert exp.n_steps >= 1
    anneal = cli.build_experiment(cli.load_config("burgers_annealing"))
    assert anneal.cfg.anneal is not None
    assert anneal.cfg.anneal.target_ratio == pytest.approx(4.8e6)
    assert anneal.spec.q / anneal.spec.r_d == pytest.approx(25.0)


def test_bundled_heat_run_produces_monotone_log(tmp_path):
    assert cli.main(["run", "heat_reaching", "--output-dir", str(tmp_path / "h")]) == 0
    cols = cli.load_convergence_csv(tmp_path / "h" / "convergence.csv")
    costs = cols[1]
    assert np.all(np.diff(costs) <= 0.0)
    assert costs[-1] < costs[0]


def test_bundled_burgers_run_succeeds(tmp_path):
    assert cli.main(["run", "burgers_reaching", "--output-dir", str(tmp_path / "b")]) == 0
    cols = cli.load_convergence_csv(tmp_path / "b" / "convergence.csv")
    assert cols[1][-1] < cols[1][0]


def test_run_dispatches_annealing(tiny_config, tmp_path):
    cfg_text = TINY_CONFIG + "\n[anneal]\ntarget_ratio = 320.0\ngrowth = 4.0\ninner_tol = 1e-4\n"
    path = tmp_path / "anneal.toml"
    path.write_text(cfg_text)
    out = tmp_path / "a"
    assert cli.main(["run", str(path), "--output-dir", str(out)]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["anneal"]["target_ratio"] == 320.0
    cols = cli.load_convergence_csv(out / "convergence.csv")
    iters = cols[0]
    assert np.all(np.diff(iters) > 0)  # rounds concatenate with increasing indices


def test_verify_quick_passes(capsys):
    import time

    start = time.perf_counter()
    assert cli.verify(quick=True) == 0
    assert time.perf_counter() - start < 10.0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(cli.VERIFY_CHECKS)
    assert all(line.startswith("PASS") for line in lines)


def test_verify_detects_injected_sign_error(monkeypatch, capsys):
    import pdeddp.lqr as lqr_mod

    original = lqr_mod.feedback_gain

    def flipped(prob, P, boundary=False):
        return -original(prob, P, boundary)

    monkeypatch.setattr(lqr_mod, "feedback_gain", flipped)
    ok, _ = cli.check_lqr_equivalence(quick=True)
    assert not ok
    assert cli.verify(quick=True) == 1


def test_cli_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.main([])
