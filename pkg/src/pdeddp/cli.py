"""Command-line entry point: configured experiment runs and oracle verification.

``pdeddp run <config.toml>`` executes a configured solve and writes plot-ready
CSV tables plus a resolved-config meta file; ``pdeddp verify`` runs the oracle
cross-checks (gradient, Riccati equivalence, scalar reduction) and reports one
pass/fail line per check.  Exit codes: 0 success, 1 verification failure,
2 malformed config, 3 divergence during a solve.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import lqr, oracle
from .backward import EULER, RK2, SEMI_IMPLICIT, Scheme, backward_pass
from .cost import CostSpec, region_fields
from .errors import ConfigError, DivergenceError
from .grid import BoundaryCondition, DIRICHLET, SpatialGrid, make_grid, second_difference
from .models import BurgersModel, BurgersParams, HeatModel, HeatParams, LinearModel, rollout
from .solver import AnnealConfig, SolverConfig, anneal_solve, ddp_solve

_SCHEME_NAMES = {"euler": EULER, "rk2": RK2, "semi-implicit": SEMI_IMPLICIT,
                 "semi_implicit": SEMI_IMPLICIT}


@dataclass
class Experiment:
    """A fully resolved run: model, cost, grid, horizon, solver settings."""

    model: object
    spec: CostSpec
    grid: SpatialGrid
    X0: np.ndarray
    cfg: SolverConfig
    t0: float
    tf: float
    n_steps: int
    output_dir: Path
    resolved: dict

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.n_steps


def _section(raw: dict, name: str) -> dict:
    if name not in raw:
        raise ConfigError(f"missing [{name}] section")
    if not isinstance(raw[name], dict):
        raise ConfigError(f"[{name}] must be a section")
    return raw[name]


def _get(sec: dict, section: str, key: str, kind, default=None):
    if key not in sec:
        if default is not None:
            return default
        raise ConfigError(f"missing key {section}.{key}")
    value = sec[key]
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {value!r}") from exc


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).parent / "configs" / f"{path.name}.toml"
        if bundled.exists():
            path = bundled
        else:
            raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def build_experiment(raw: dict, output_dir: str | None = None,
                     scheme_override: str | None = None) -> Experiment:
    """Validate a raw config mapping and construct the runnable experiment."""
    g = _section(raw, "grid")
    n_nodes = _get(g, "grid", "n_nodes", int)
    length = _get(g, "grid", "length", float, 1.0)
    try:
        grid = make_grid(n_nodes, length)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    m = _section(raw, "model")
    kind = _get(m, "model", "kind", str)
    if kind == "heat":
        params = HeatParams(epsilon=_get(m, "model", "epsilon", float, 0.1))
        model = HeatModel(params, grid)
    elif kind == "burgers":
        params = BurgersParams(epsilon=_get(m, "model", "epsilon", float, 0.05),
                               bc_value=_get(m, "model", "bc_value", float, 1.0))
        model = BurgersModel(params, grid, n_act=_get(m, "model", "n_actuators", int, 5))
        grid = model.grid
    else:
        raise ConfigError(f"model.kind must be 'heat' or 'burgers', got {kind!r}")

    t = _section(raw, "time")
    t0 = _get(t, "time", "t0", float, 0.0)
    tf = _get(t, "time", "tf", float)
    n_steps = _get(t, "time", "n_steps", int)
    if n_steps < 1 or tf <= t0:
        raise ConfigError("time: require n_steps >= 1 and tf > t0")

    c = _section(raw, "cost")
    regions = []
    for name in ("outer", "central"):
        target = _get(c, "cost", f"{name}_target", float)
        bands = c.get(name)
        if bands is None:
            a = grid.length
            bands = [[0.0, 0.25 * a], [0.75 * a, a]] if name == "outer" else [[0.4 * a, 0.6 * a]]
        for band in bands:
            if len(band) != 2:
                raise ConfigError(f"cost.{name} bands must be [lo, hi] pairs")
            regions.append((float(band[0]), float(band[1]), target))
    desired, mask = region_fields(grid, regions)
    try:
        spec = CostSpec(q=_get(c, "cost", "q", float), q_f=_get(c, "cost", "q_f", float),
                        r_d=_get(c, "cost", "r_d", float), desired=desired, mask=mask)
    except ValueError as exc:
        raise ConfigError(f"cost: {exc}") from exc

    s = _section(raw, "solver")
    scheme_name = scheme_override or _get(s, "solver", "scheme", str, "euler")
    if scheme_name not in _SCHEME_NAMES:
        raise ConfigError(f"solver.scheme must be one of {sorted(_SCHEME_NAMES)}")
    scheme = Scheme(kind=_SCHEME_NAMES[scheme_name], mu=_get(s, "solver", "mu", float, 1e-6))
    anneal = None
    if "anneal" in raw:
        an = raw["anneal"]
        anneal = AnnealConfig(target_ratio=_get(an, "anneal", "target_ratio", float),
                              growth=_get(an, "anneal", "growth", float, 4.0),
                              inner_tol=_get(an, "anneal", "inner_tol", float, 1e-4))
    try:
        cfg = SolverConfig(
            max_iters=_get(s, "solver", "max_iters", int, 100),
            gamma_d=_get(s, "solver", "gamma_d", float, 0.5),
            gamma_b=_get(s, "solver", "gamma_b", float, 0.5),
            line_search=_get(s, "solver", "line_search", str, "backtracking"),
            shrink=_get(s, "solver", "shrink", float, 0.5),
            max_tries=_get(s, "solver", "max_tries", int, 8),
            tol_rel_cost=_get(s, "solver", "tol_rel_cost", float, 1e-6),
            scheme=scheme,
            convergence_metric=_get(s, "solver", "convergence_metric", str, "cost"),
            fused_forward=bool(s.get("fused_forward", False)),
            anneal=anneal,
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc

    out = raw.get("output", {})
    out_dir = Path(output_dir or out.get("directory", "out"))
    resolved = {
        "model": {"kind": kind, **({"epsilon": params.epsilon} if kind == "heat" else
                                   {"epsilon": params.epsilon, "bc_value": params.bc_value,
                                    "n_actuators": model.n_act})},
        "grid": {"n_nodes": grid.n_nodes, "length": grid.length, "dx": grid.dx},
        "time": {"t0": t0, "tf": tf, "n_steps": n_steps},
        "cost": {"q": spec.q, "q_f": spec.q_f, "r_d": spec.r_d,
                 "regions": [list(r) for r in regions]},
        "solver": {"max_iters": cfg.max_iters, "gamma_d": cfg.gamma_d,
                   "gamma_b": cfg.gamma_b, "line_search": cfg.line_search,
                   "shrink": cfg.shrink, "max_tries": cfg.max_tries,
                   "tol_rel_cost": cfg.tol_rel_cost, "scheme": scheme.kind,
                   "mu": scheme.mu, "convergence_metric": cfg.convergence_metric},
        "anneal": (None if anneal is None else
                   {"target_ratio": anneal.target_ratio, "growth": anneal.growth,
                    "inner_tol": anneal.inner_tol}),
        "output": {"directory": str(out_dir)},
    }
    return Experiment(model=model, spec=spec, grid=grid,
                      X0=np.zeros(grid.n_nodes), cfg=cfg, t0=t0, tf=tf,
                      n_steps=n_steps, output_dir=out_dir, resolved=resolved)


def write_trajectory_csv(path: Path, times: np.ndarray, grid: SpatialGrid,
                         states: np.ndarray) -> None:
    """Long-format state table ``t,x,value`` (one row per node per time sample)."""
    x = grid.nodes()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,x,value\n")
        for i, t in enumerate(times):
            for j in range(grid.n_nodes):
                fh.write(f"{float(t)!r},{float(x[j])!r},{float(states[i, j])!r}\n")


def write_control_csv(path: Path, times: np.ndarray, U: np.ndarray) -> None:
    """Long-format control table ``t,actuator,value``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,actuator,value\n")
        for k in range(U.shape[0]):
            for j in range(U.shape[1]):
                fh.write(f"{float(times[k])!r},{j},{float(U[k, j])!r}\n")


def write_convergence_csv(path: Path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,total_cost,state_cost,control_cost,value_integral,"
                 "step_norm,gamma\n")
        for r in history:
            fh.write(f"{r.iteration},{r.total_cost!r},{r.state_cost!r},"
                     f"{r.control_cost!r},{r.value_integral!r},{r.step_norm!r},"
                     f"{r.gamma!r}\n")


def _load_columns(path: Path, n_cols: int):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != n_cols:
            raise ValueError(f"{path}: expected {n_cols} columns, found {len(header)}")
        cols = [[] for _ in range(n_cols)]
        for line in fh:
            parts = line.strip().split(",")
            for c, part in zip(cols, parts):
                c.append(float(part))
    return header, [np.array(c) for c in cols]


def load_trajectory_csv(path: Path):
    """Inverse of :func:`write_trajectory_csv`; returns (t, x, value) columns."""
    _, cols = _load_columns(path, 3)
    return cols[0], cols[1], cols[2]


def load_control_csv(path: Path):
    _, cols = _load_columns(path, 3)
    return cols[0], cols[1].astype(int), cols[2]


def load_convergence_csv(path: Path):
    _, cols = _load_columns(path, 7)
    return cols


def run(config_path: str, output_dir: str | None = None,
        scheme: str | None = None) -> int:
    """Execute a configured solve and emit output tables; returns the exit status."""
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        exp = build_experiment(load_config(config_path), output_dir, scheme)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    U0 = np.zeros((exp.n_steps, exp.model.n_act))
    try:
        if exp.cfg.anneal is not None:
            sol = anneal_solve(exp.model, exp.spec, exp.X0, exp.cfg, exp.grid,
                               exp.dt, exp.n_steps, U_init=U0)
        else:
            sol = ddp_solve(exp.model, exp.spec, exp.X0, U0, exp.cfg, exp.grid,
                            exp.dt, exp.n_steps)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3

    exp.output_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(exp.output_dir / "trajectory.csv", sol.trajectory.times,
                         exp.grid, sol.trajectory.states)
    write_control_csv(exp.output_dir / "control.csv", sol.trajectory.times[:-1], sol.U)
    write_convergence_csv(exp.output_dir / "convergence.csv", sol.history)
    with open(exp.output_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(exp.resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    final = sol.history[-1]
    print(f"done: {len(sol.history) - 1} iterations, J={final.total_cost:.6e}, "
          f"converged={sol.converged}")
    return 0


# ---------------------------------------------------------------------------
# verification checks (also exercised by the test suite)

def _regulation_setup(n_nodes: int, n_steps: int, tf: float, epsilon: float = 0.05):
    """Linear diffusion regulation problem (zero target, nonzero start)."""
    grid = make_grid(n_nodes, 1.0)
    model = HeatModel(HeatParams(epsilon=epsilon), grid)
    spec = CostSpec(q=4.0, q_f=12.0, r_d=0.7,
                    desired=np.zeros(n_nodes), mask=np.ones(n_nodes))
    X0 = np.sin(np.pi * grid.nodes()) + 0.4 * np.sin(3 * np.pi * grid.nodes())
    return grid, model, spec, X0, tf / n_steps


def check_gradient(quick: bool = False) -> tuple[bool, str]:
    """Adjoint-vs-finite-difference gradient agreement on random controls."""
    from .cost import total_cost

    grid, model, spec, X0, dt = _regulation_setup(16, 50, 0.05)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(3 if quick else 10):
        U = rng.normal(scale=0.5, size=(50, model.n_act))
        traj = rollout(model, X0, U, dt, 50)
        psi = oracle.psi_recursion(traj, U, model, spec, grid, dt)
        g = oracle.cost_gradient_psi(traj, U, psi, model, spec, grid, dt)

        def evaluate(U_try):
            t = rollout(model, X0, U_try, dt, 50)
            return total_cost(spec, t, U_try, grid, dt)

        g_fd = oracle.fd_gradient(evaluate, U, 1e-5)
        worst = max(worst, float(np.max(np.abs(g - g_fd)) / (np.max(np.abs(g_fd)) + 1e-300)))
    ok = worst <= 1e-5
    return ok, f"max relative gradient deviation {worst:.3e} (tol 1e-5)"


def _one_shot_lq_solution(grid, model, spec, X0, dt, n_steps):
    cfg = SolverConfig(max_iters=2, gamma_d=1.0, gamma_b=1.0, line_search="off",
                       tol_rel_cost=0.0, scheme=Scheme(kind=EULER, mu=0.0))
    return ddp_solve(model, spec, X0, np.zeros((n_steps, model.n_act)), cfg,
                     grid, dt, n_steps)


def check_lqr_equivalence(quick: bool = False) -> tuple[bool, str]:
    """One Newton-step solve on a linear problem must match the Riccati reference."""
    n_nodes, n_steps = (16, 80) if quick else (32, 200)
    grid, model, spec, X0, dt = _regulation_setup(n_nodes, n_steps, 0.08)
    sol = _one_shot_lq_solution(grid, model, spec, X0, dt, n_steps)
    prob = lqr.LqrProblem.from_reaching_cost(
        model.drift_jacobian(0.0, X0), model.act, spec, grid, dt, n_steps)
    report = lqr.check_ddp_equivalence(prob, sol.values, sol.trajectory, sol.U,
                                       scheme=Scheme(kind=EULER, mu=0.0))
    worst = max(report.values())
    ok = worst <= 1e-6
    detail = ", ".join(f"{k}={v:.2e}" for k, v in sorted(report.items()))
    return ok, f"{detail} (tol 1e-6)"


def check_lqr_boundary(quick: bool = False) -> tuple[bool, str]:
    """Boundary-actuated linear variant exercises the k_b / K_b path."""
    n_nodes, n_steps = (12, 60) if quick else (24, 150)
    grid = make_grid(n_nodes, 1.0)
    d2, _ = second_difference(grid)
    eps = 0.05
    A = eps * d2
    B_b = np.zeros((n_nodes, 2))
    B_b[0, 0] = eps / grid.dx**2
    B_b[-1, 1] = eps / grid.dx**2
    act = np.eye(n_nodes)
    model = LinearModel(A, act, grid, b_act=B_b)
    spec = CostSpec(q=2.0, q_f=6.0, r_d=1.0, r_b=2.5,
                    desired=np.zeros(n_nodes), mask=np.ones(n_nodes))
    X0 = np.sin(np.pi * grid.nodes())
    dt = 0.05 / n_steps
    sol = _one_shot_lq_solution(grid, model, spec, X0, dt, n_steps)
    prob = lqr.LqrProblem.from_reaching_cost(A, act, spec, grid, dt, n_steps, B_b=B_b)
    report = lqr.check_ddp_equivalence(prob, sol.values, sol.trajectory, sol.U,
                                       scheme=Scheme(kind=EULER, mu=0.0),
                                       U_b_traj=sol.U_b)
    worst = max(report.values())
    ok = worst <= 1e-6
    return ok, f"worst deviation {worst:.3e} incl. boundary gains (tol 1e-6)"


def check_scalar_reduction(quick: bool = False) -> tuple[bool, str]:
    """One-node backward pass against the plain-float reference."""
    from .cost import CostSpec as _Spec

    n_steps = 100
    dt = 0.01
    one_grid = SpatialGrid(n_nodes=1, length=2.0, dx=1.0,
                           bc=BoundaryCondition(DIRICHLET, 0.0, 0.0))

    class _ScalarModel(LinearModel):
        def __init__(self):
            super().__init__(np.array([[-0.8]]), np.array([[0.6]]), one_grid)

        def drift(self, t, X):
            return -0.8 * X + 0.3 * X * X

        def drift_jacobian(self, t, X):
            return np.array([[-0.8 + 0.6 * X[0]]])

    model = _ScalarModel()
    spec = _Spec(q=1.5, q_f=4.0, r_d=0.9, desired=np.array([0.7]), mask=np.array([1.0]))
    rng = np.random.default_rng(3)
    U = rng.normal(scale=0.4, size=(n_steps, 1))
    traj = rollout(model, np.array([0.2]), U, dt, n_steps)
    values = backward_pass(traj, U, model, spec, Scheme(kind=EULER, mu=0.0),
                           one_grid, dt)

    sprob = oracle.ScalarProblem(
        f=lambda x, u: -0.8 * x + 0.3 * x * x + 0.6 * u,
        f_x=lambda x, u: -0.8 + 0.6 * x,
        f_u=lambda x, u: 0.6,
        q=1.5, q_f=4.0, r=0.9, target=0.7, x0=0.2, dt=dt, n_steps=n_steps,
        u_traj=U[:, 0])
    ref = oracle.scalar_ddp_reference(sprob)
    dev = max(
        float(np.max(np.abs(values.V - ref.V))),
        float(np.max(np.abs(values.V_X[:, 0] - ref.V_x))),
        float(np.max(np.abs(values.V_XX[:, 0, 0] - ref.V_xx))),
    )
    ok = dev <= 1e-12
    return ok, f"max deviation {dev:.3e} over {n_steps} steps (tol 1e-12)"


VERIFY_CHECKS = [
    ("gradient oracle", check_gradient),
    ("lqr equivalence", check_lqr_equivalence),
    ("lqr boundary channel", check_lqr_boundary),
    ("scalar reduction", check_scalar_reduction),
]


def verify(quick: bool = False) -> int:
    """Run all oracle checks, print one line per check, return 0/1."""
    failures = 0
    for name, fn in VERIFY_CHECKS:
        ok, detail = fn(quick=quick)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdeddp",
                                     description="PDE trajectory optimization runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("config", help="path to a TOML config (or bundled name)")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--scheme", choices=sorted(_SCHEME_NAMES), default=None)
    p_run.add_argument("--seed", type=int, default=None,
                       help="reserved; the solver is deterministic")
    p_ver = sub.add_parser("verify", help="run oracle cross-checks")
    p_ver.add_argument("--quick", action="store_true")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output_dir, args.scheme)
    return verify(quick=args.quick)


if __name__ == "__main__":
    sys.exit(main())
