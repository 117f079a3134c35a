"""Command-line front end.

Subcommands: dynamics (run, restpoints), bsk (solve, verify), mfg (solve,
control), nplayer (run, rate, chaos, doublelimit, csma), mkv (run, rate).

Every run writes its numeric artifacts plus a run manifest holding the
resolved argv, seed, configuration, artifact list, and wall-clock duration;
re-running the manifest (``rerun_manifest``) reproduces all numeric
artifacts byte-for-byte, for any worker count. Floats are serialized with 17
significant digits for round-trip fidelity.

Exit codes: 0 success, 1 validation/config error, 2 solver did not converge
(artifacts still written), 3 internal error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bsk, dynamics, hjb, mkv, nplayer
from .core import resolve_scenario
from .core.scenarios import bundled_path, load_toml
from .core.types import MeanFieldTrajectory, PolicyTrajectory
from .errors import ConfigParseError, MfgError


# --------------------------------------------------------------------------
# deterministic serialization (17 significant digits)
# --------------------------------------------------------------------------

def fmt_float(x) -> str:
    return format(float(x), ".17g")


def _json_emit(obj, indent: int) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  "{k}": {_json_emit(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            return "[]"
        flat = all(isinstance(v, (int, float, str, bool)) or v is None for v in seq)
        if flat:
            return "[" + ", ".join(_json_emit(v, 0) for v in seq) + "]"
        items = [f"{pad}  {_json_emit(v, indent + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, np.ndarray):
        return _json_emit(obj.tolist(), indent)
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_json(path: Path, obj) -> None:
    path.write_text(_json_emit(obj, 0) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# shared encoders
# --------------------------------------------------------------------------

def _traj_rows(traj: MeanFieldTrajectory, space, stride: int = 1):
    header = ["t"]
    for ti, ty in enumerate(space.types):
        for s in space.states:
            header.append(f"m_{s}" if space.n_types == 1 else f"m_{ty}_{s}")
    rows = []
    idx = list(range(0, traj.n_points, stride))
    if idx[-1] != traj.n_points - 1:
        idx.append(traj.n_points - 1)
    for k in idx:
        rows.append([traj.grid[k]] + [traj.values[k, ti, xi] for ti in range(space.n_types) for xi in range(space.n_states)])
    return header, rows


def _solution_dict(model, sol, extra=None):
    out = {
        "scenario": model.name,
        "mode": model.kernel.mode,
        "states": list(model.space.states),
        "types": list(model.space.types),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "smoothed": sol.smoothed,
        "grid": sol.mean_field.grid,
        "mean_field": sol.mean_field.values,
        "values": sol.values.v,
        "policy": sol.policy.probs,
    }
    if extra:
        out.update(extra)
    return out


def _solution_from_dict(data) -> bsk.MfeSolution:
    grid = np.asarray(data["grid"], dtype=float)
    return bsk.MfeSolution(
        policy=PolicyTrajectory(np.asarray(data["policy"], dtype=float)),
        mean_field=MeanFieldTrajectory(grid=grid, values=np.asarray(data["mean_field"], dtype=float)),
        values=bsk.ValueTable(v=np.asarray(data["values"], dtype=float)),
        residual=float(data["residual"]),
        iterations=int(data["iterations"]),
        converged=bool(data["converged"]),
        smoothed=bool(data.get("smoothed", False)),
    )


def _parse_floats(text: str):
    return [float(v) for v in str(text).split(",") if v != ""]


def _parse_ints(text: str):
    return [int(v) for v in str(text).split(",") if v != ""]


# --------------------------------------------------------------------------
# subcommand runners: each returns (exit_code, artifact file names)
# --------------------------------------------------------------------------

def _run_dynamics_run(args, out: Path):
    model = resolve_scenario(args.scenario)
    proto = dynamics.RevisionProtocol.from_scenario(model, args.protocol, temperature=args.eta)
    kern = dynamics.protocol_to_kernel(proto)
    horizon = args.T if args.T is not None else (model.horizon.T or 1.0)
    cfg = dynamics.IntegratorConfig(method=args.method, step=args.dt, horizon=horizon, renormalize=args.renormalize)
    traj = dynamics.integrate_forward(kern, model.m0[0], cfg)
    header, rows = _traj_rows(traj, model.space, stride=args.csv_stride)
    write_csv(out / "trajectory.csv", header, rows)
    return 0, ["trajectory.csv"]


def _run_dynamics_restpoints(args, out: Path):
    model = resolve_scenario(args.scenario)
    proto = dynamics.RevisionProtocol.from_scenario(model, args.protocol, temperature=args.eta)
    kern = dynamics.protocol_to_kernel(proto)
    rng = np.random.default_rng(args.seed)
    seeds = [model.m0[0]] + list(rng.dirichlet(np.ones(model.space.n_states), size=args.n_seeds))
    found = dynamics.find_rest_points(kern, seeds, tol=args.tol)
    write_json(out / "restpoints.json", {
        "scenario": model.name,
        "protocol": args.protocol,
        "points": [p for p in found.points],
        "failures": [{"seed_index": i, "residual": r} for i, r in found.failures],
    })
    return 0, ["restpoints.json"]


def _run_bsk_solve(args, out: Path):
    model = resolve_scenario(args.scenario)
    opts = bsk.FixedPointOptions(damping=args.damping, max_iters=args.max_iters, tol=args.tol, smoothing=args.smooth)
    sol = bsk.solve_bsk_fixed_point(model, opts, mu=args.mu)
    extra = {"mu": args.mu} if args.mu is not None else None
    write_json(out / "solution.json", _solution_dict(model, sol, extra))
    header, rows = _traj_rows(sol.mean_field, model.space)
    write_csv(out / "trajectory.csv", header, rows)
    return (0 if sol.converged else 2), ["solution.json", "trajectory.csv"]


def _run_bsk_verify(args, out: Path):
    import json

    model = resolve_scenario(args.scenario)
    data = json.loads(Path(args.solution).read_text())
    sol = _solution_from_dict(data)
    sol.policy.validate_rows(model.space)
    report = bsk.verify_support_condition(model, sol, tol=args.tol)
    forward = bsk.forward_kolmogorov(model, sol.policy)
    forward_gap = sol.mean_field.sup_l1_distance(forward)
    ok = report.ok and forward_gap <= 1e-12
    write_json(out / "verify.json", {
        "scenario": model.name,
        "support_ok": report.ok,
        "worst_gap": report.worst_gap,
        "witnesses": len(report.witnesses),
        "forward_gap": forward_gap,
        "ok": ok,
    })
    return (0 if ok else 1), ["verify.json"]


def _run_mfg_solve(args, out: Path):
    model = resolve_scenario(args.scenario)
    opts = bsk.FixedPointOptions(damping=args.damping, max_iters=args.max_iters, tol=args.tol)
    sol = hjb.solve_mfg_fixed_point(model, opts, dt=args.dt)
    eps = hjb.exploitability(model, sol, args.dt)
    write_json(out / "solution.json", _solution_dict(model, sol, {"exploitability": eps, "dt": args.dt}))
    header, rows = _traj_rows(sol.mean_field, model.space, stride=args.csv_stride)
    write_csv(out / "trajectory.csv", header, rows)
    print(f"exploitability: {fmt_float(eps)}")
    return (0 if sol.converged else 2), ["solution.json", "trajectory.csv"]


def _run_mfg_control(args, out: Path):
    model = resolve_scenario(args.scenario)
    problem = hjb.planner_from_scenario(model)
    grid = hjb.SimplexGrid.build(args.grid_k, model.space.n_states)
    dp = hjb.solve_mf_control_simplex_dp(problem, grid, args.dt)
    header = ["t"] + [f"m_{s}" for s in model.space.states] + ["value", "control"]
    rows = []
    n_steps = dp.times.size - 1
    stride = max(1, n_steps // max(args.time_slices, 1))
    for k in list(range(0, n_steps, stride)) + [n_steps]:
        for p in range(grid.n_points):
            ctrl = dp.control_idx[min(k, n_steps - 1), p]
            rows.append([dp.times[k]] + list(grid.points[p]) + [dp.values[k, p], int(ctrl)])
    write_csv(out / "control_values.csv", header, rows)
    return 0, ["control_values.csv"]


def _load_policy_file(path, model):
    import json

    if path is None:
        return None
    data = json.loads(Path(path).read_text())
    return PolicyTrajectory(np.asarray(data["policy"], dtype=float))


def _run_nplayer_run(args, out: Path):
    model = resolve_scenario(args.scenario)
    policy = _load_policy_file(args.policy, model)
    cfg = nplayer.SimConfig(
        n=args.n, seed=args.seed, reps=args.reps, tagged=args.tagged,
        exact_init=args.exact_init, clock_rate=args.clock_rate, record_dt=args.record_dt,
    )
    emp = nplayer.simulate_nplayer(model, cfg, policy)
    mean = emp.mean_profile()
    space = model.space
    header = ["t"] + [
        (f"m_{s}" if space.n_types == 1 else f"m_{ty}_{s}") for ty in space.types for s in space.states
    ]
    rows = [
        [emp.grid[k]] + [mean[k, ti, xi] for ti in range(space.n_types) for xi in range(space.n_states)]
        for k in range(emp.grid.size)
    ]
    write_csv(out / "empirical.csv", header, rows)
    return 0, ["empirical.csv"]


def _run_nplayer_rate(args, out: Path):
    model = resolve_scenario(args.scenario)
    report = nplayer.convergence_study(
        model, _parse_ints(args.ns), reps=args.reps, seed=args.seed, exact_init=args.exact_init,
        clock_rate=args.clock_rate, record_dt=args.record_dt, threads=args.threads,
    )
    write_json(out / "rate.json", {
        "scenario": model.name,
        "ns": report.ns,
        "means": report.means,
        "ses": report.ses,
        "slope": report.slope,
        "intercept": report.intercept,
    })
    write_csv(out / "rate.csv", ["n", "mean", "se"], list(zip(report.ns, report.means, report.ses)))
    return 0, ["rate.json", "rate.csv"]


def _run_nplayer_chaos(args, out: Path):
    model = resolve_scenario(args.scenario)
    nx = model.space.n_states
    phi1 = np.array(_parse_floats(args.phi1)) if args.phi1 else np.eye(nx)[0]
    phi2 = np.array(_parse_floats(args.phi2)) if args.phi2 else np.eye(nx)[0]
    ns = _parse_ints(args.ns)
    t_index = args.t_index if args.t_index is not None else model.horizon.stages
    study = nplayer.chaos_study(model, ns, reps=args.reps, phis=[phi1, phi2], t_index=t_index, seed=args.seed)
    write_json(out / "chaos.json", {
        "scenario": model.name,
        "t_index": t_index,
        "per_n": [
            {"n": n, "gap": r.gap, "se": r.se, "product_moment": r.product_moment, "marginal_product": r.marginal_product}
            for n, r in zip(study.ns, study.reports)
        ],
        "slope": study.slope,
    })
    return 0, ["chaos.json"]


def _run_nplayer_doublelimit(args, out: Path):
    model = resolve_scenario(args.scenario)
    if model.payoff.population_affine is None:
        raise ConfigParseError("double-limit study needs a matrix-payoff population scenario", field="scenario")
    A, offset = model.payoff.population_affine
    report = nplayer.double_limit_experiment(
        A, model.m0[0], eps_mut=args.eps_mut, n=args.n, T_long=args.T, reps=args.reps, seed=args.seed,
    )
    write_json(out / "doublelimit.json", {
        "scenario": model.name,
        "n": report.n,
        "eps_mut": report.eps_mut,
        "rest_point": report.rest_point,
        "mf_min_distance_to_rest": report.mf_min_distance_to_rest,
        "ergodic_average": report.ergodic_average,
        "ergodic_distance_to_rest": report.ergodic_distance_to_rest,
    })
    return 0, ["doublelimit.json"]


def _run_nplayer_csma(args, out: Path):
    params = nplayer.CsmaParams(
        gamma=args.gamma, beta2=args.beta2, beta3=args.beta3, K=args.K,
        attempt=tuple(_parse_floats(args.attempt)),
    )
    fixed = nplayer.csma_mean_field_fixed_point(params, args.n)
    sim = nplayer.simulate_csma(params, args.n, args.slots, seed=args.seed)
    l1 = float(np.abs(fixed - sim.stationary).sum())
    write_json(out / "csma.json", {
        "n": args.n,
        "slots": args.slots,
        "K": args.K,
        "attempt_prob": params.attempt_probs(args.n),
        "mean_field_fixed_point": fixed,
        "simulated_stationary": sim.stationary,
        "l1_distance": l1,
    })
    write_csv(
        out / "csma_snapshots.csv",
        ["slot"] + [f"m_b{i}" for i in range(args.K + 1)],
        [[int(s)] + list(row) for s, row in zip(sim.snapshot_slots, sim.snapshots)],
    )
    return 0, ["csma.json", "csma_snapshots.csv"]


def _load_mkv_config(ref) -> dict:
    p = Path(str(ref))
    data = load_toml(p if p.exists() else bundled_path(str(ref)))
    if data.get("kind") != "mkv":
        raise ConfigParseError("expected an mkv model file (kind = \"mkv\")", field=str(ref))
    model = data.get("model", {})
    init = data.get("initial", {})
    sim = data.get("sim", {})
    return {
        "family": model.get("family", "ou"),
        "a": float(model.get("a", 1.0)),
        "b": float(model.get("b", 0.0)),
        "sigma": float(model.get("sigma", 1.0)),
        "c": float(model.get("c", 0.0)),
        "xs": model.get("xs"),
        "fs": model.get("fs"),
        "mean0": float(init.get("mean", 0.0)),
        "var0": float(init.get("var", 1.0)),
        "n": int(sim.get("n", 1000)),
        "dt": float(sim.get("dt", 1e-3)),
        "T": float(sim.get("T", 1.0)),
    }


def _mkv_model_from_config(cfg: dict):
    if cfg["family"] == "ou":
        return mkv.ou_model(cfg["a"], cfg["b"], cfg["sigma"])
    if cfg["family"] == "pure-drift":
        return mkv.pure_drift_model(cfg["c"])
    if cfg["family"] == "custom-table":
        return mkv.table_model(cfg["xs"], cfg["fs"], cfg["sigma"])
    raise ConfigParseError(f"unknown mkv model family {cfg['family']!r}", field="model.family")


def _run_mkv_run(args, out: Path):
    cfg = _load_mkv_config(args.model)
    n = args.n or cfg["n"]
    dt = args.dt or cfg["dt"]
    T = args.T or cfg["T"]
    model = _mkv_model_from_config(cfg)
    stride = args.record_stride or max(1, int(round(T / dt)) // 10)
    paths = mkv.simulate_particles(
        model, n, dt, T, seed=args.seed, init=(cfg["mean0"], cfg["var0"]), record_stride=stride
    )
    rows = []
    for k, t in enumerate(paths.times):
        for j in range(n):
            rows.append([t, j, paths.X[k, j]])
    write_csv(out / "particles.csv", ["t", "j", "x"], rows)
    return 0, ["particles.csv"]


def _run_mkv_rate(args, out: Path):
    cfg = _load_mkv_config(args.model)
    if cfg["family"] != "ou":
        raise ConfigParseError("rate studies need the ou model family", field="model.family")
    ou_cfg = mkv.OuConfig(
        a=args.a or cfg["a"], b=cfg["b"], sigma=args.sigma or cfg["sigma"],
        mean0=cfg["mean0"], var0=cfg["var0"],
    )
    report = mkv.rate_study(
        ou_cfg, ns=_parse_ints(args.ns), deltas=_parse_floats(args.deltas),
        T=args.T or cfg["T"], reps=args.reps, seed=args.seed,
        reference=args.reference, threads=args.threads,
    )
    write_json(out / "rate.json", {
        "a": ou_cfg.a, "b": ou_cfg.b, "sigma": ou_cfg.sigma,
        "rows": report.rows,
        "n_fit_slope": report.n_fit_slope,
        "delta_fit_slope": report.delta_fit_slope,
    })
    write_csv(
        out / "rate.csv", ["n", "delta", "mean", "se"],
        [[r["n"], r["delta"], r["mean"], r["se"]] for r in report.rows],
    )
    return 0, ["rate.json", "rate.csv"]


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfgtools", description="Finite-state mean field games toolkit")
    p.add_argument("--version", action="version", version=f"mfgtools {__version__}")
    sub = p.add_subparsers(dest="module", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None, help="worker count (never affects results)")
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--emit-manifest", action=argparse.BooleanOptionalAction, default=True)

    dyn = sub.add_parser("dynamics").add_subparsers(dest="verb", required=True)
    d_run = dyn.add_parser("run")
    d_run.add_argument("--scenario", required=True)
    d_run.add_argument("--protocol", default="replicator", choices=dynamics.PROTOCOL_NAMES)
    d_run.add_argument("--eta", type=float, default=None, help="smoothed best response temperature")
    d_run.add_argument("--dt", type=float, default=1e-3)
    d_run.add_argument("--T", type=float, default=None)
    d_run.add_argument("--method", default="rk4", choices=["rk4", "explicit-euler"])
    d_run.add_argument("--renormalize", action="store_true")
    d_run.add_argument("--csv-stride", type=int, default=1)
    common(d_run)
    d_rp = dyn.add_parser("restpoints")
    d_rp.add_argument("--scenario", required=True)
    d_rp.add_argument("--protocol", default="replicator", choices=dynamics.PROTOCOL_NAMES)
    d_rp.add_argument("--eta", type=float, default=None)
    d_rp.add_argument("--n-seeds", type=int, default=8)
    d_rp.add_argument("--tol", type=float, default=1e-8)
    common(d_rp)

    bk = sub.add_parser("bsk").add_subparsers(dest="verb", required=True)
    b_solve = bk.add_parser("solve")
    b_solve.add_argument("--scenario", required=True)
    b_solve.add_argument("--damping", type=float, default=0.5)
    b_solve.add_argument("--tol", type=float, default=1e-8)
    b_solve.add_argument("--max-iters", type=int, default=500)
    b_solve.add_argument("--mu", type=float, default=None, help="risk-sensitivity; omit for risk-neutral")
    b_solve.add_argument("--smooth", action="store_true", help="softmax smoothing for mixed equilibria")
    common(b_solve)
    b_verify = bk.add_parser("verify")
    b_verify.add_argument("--scenario", required=True)
    b_verify.add_argument("--solution", required=True)
    b_verify.add_argument("--tol", type=float, default=1e-6)
    common(b_verify)

    mg = sub.add_parser("mfg").add_subparsers(dest="verb", required=True)
    m_solve = mg.add_parser("solve")
    m_solve.add_argument("--scenario", required=True)
    m_solve.add_argument("--dt", type=float, default=1e-3)
    m_solve.add_argument("--damping", type=float, default=0.5)
    m_solve.add_argument("--tol", type=float, default=1e-8)
    m_solve.add_argument("--max-iters", type=int, default=500)
    m_solve.add_argument("--csv-stride", type=int, default=1)
    common(m_solve)
    m_ctl = mg.add_parser("control")
    m_ctl.add_argument("--scenario", required=True)
    m_ctl.add_argument("--grid-k", type=int, default=10)
    m_ctl.add_argument("--dt", type=float, default=1e-2)
    m_ctl.add_argument("--time-slices", type=int, default=10)
    common(m_ctl)

    npl = sub.add_parser("nplayer").add_subparsers(dest="verb", required=True)
    n_run = npl.add_parser("run")
    n_run.add_argument("--scenario", required=True)
    n_run.add_argument("--n", type=int, required=True)
    n_run.add_argument("--reps", type=int, default=1)
    n_run.add_argument("--tagged", type=int, default=0)
    n_run.add_argument("--exact-init", action="store_true")
    n_run.add_argument("--clock-rate", type=float, default=1.0)
    n_run.add_argument("--record-dt", type=float, default=None)
    n_run.add_argument("--policy", default=None, help="solution.json supplying the policy")
    common(n_run)
    n_rate = npl.add_parser("rate")
    n_rate.add_argument("--scenario", required=True)
    n_rate.add_argument("--ns", default="100,400,1600")
    n_rate.add_argument("--reps", type=int, default=200)
    n_rate.add_argument("--exact-init", action=argparse.BooleanOptionalAction, default=True)
    n_rate.add_argument("--clock-rate", type=float, default=1.0)
    n_rate.add_argument("--record-dt", type=float, default=None)
    common(n_rate)
    n_chaos = npl.add_parser("chaos")
    n_chaos.add_argument("--scenario", required=True)
    n_chaos.add_argument("--ns", default="100,400,1600")
    n_chaos.add_argument("--reps", type=int, default=200)
    n_chaos.add_argument("--t-index", type=int, default=None)
    n_chaos.add_argument("--phi1", default=None, help="comma-separated per-state values")
    n_chaos.add_argument("--phi2", default=None)
    common(n_chaos)
    n_dl = npl.add_parser("doublelimit")
    n_dl.add_argument("--scenario", required=True)
    n_dl.add_argument("--eps-mut", type=float, default=0.01)
    n_dl.add_argument("--n", type=int, default=1000)
    n_dl.add_argument("--T", type=float, default=100.0)
    n_dl.add_argument("--reps", type=int, default=8)
    common(n_dl)
    n_cs = npl.add_parser("csma")
    n_cs.add_argument("--n", type=int, default=1000)
    n_cs.add_argument("--slots", type=int, default=100000)
    n_cs.add_argument("--K", type=int, default=2)
    n_cs.add_argument("--gamma", type=float, default=1.0)
    n_cs.add_argument("--beta2", type=float, default=0.0)
    n_cs.add_argument("--beta3", type=float, default=0.0)
    n_cs.add_argument("--attempt", default="1.0")
    common(n_cs)

    mk = sub.add_parser("mkv").add_subparsers(dest="verb", required=True)
    k_run = mk.add_parser("run")
    k_run.add_argument("--model", default="ou", help="mkv model file or bundled name")
    k_run.add_argument("--n", type=int, default=None)
    k_run.add_argument("--dt", type=float, default=None)
    k_run.add_argument("--T", type=float, default=None)
    k_run.add_argument("--record-stride", type=int, default=None)
    common(k_run)
    k_rate = mk.add_parser("rate")
    k_rate.add_argument("--model", default="ou")
    k_rate.add_argument("--ns", default="250,1000,4000")
    k_rate.add_argument("--deltas", default="0.00025,0.001,0.004")
    k_rate.add_argument("--reps", type=int, default=48)
    k_rate.add_argument("--T", type=float, default=None)
    k_rate.add_argument("--a", type=float, default=None)
    k_rate.add_argument("--sigma", type=float, default=None)
    k_rate.add_argument("--reference", default="oracle", choices=["oracle", "fine"])
    common(k_rate)
    return p


RUNNERS = {
    ("dynamics", "run"): _run_dynamics_run,
    ("dynamics", "restpoints"): _run_dynamics_restpoints,
    ("bsk", "solve"): _run_bsk_solve,
    ("bsk", "verify"): _run_bsk_verify,
    ("mfg", "solve"): _run_mfg_solve,
    ("mfg", "control"): _run_mfg_control,
    ("nplayer", "run"): _run_nplayer_run,
    ("nplayer", "rate"): _run_nplayer_rate,
    ("nplayer", "chaos"): _run_nplayer_chaos,
    ("nplayer", "doublelimit"): _run_nplayer_doublelimit,
    ("nplayer", "csma"): _run_nplayer_csma,
    ("mkv", "run"): _run_mkv_run,
    ("mkv", "rate"): _run_mkv_rate,
}

# flags excluded from the stored argv (reinjected on rerun)
_STRIP_FLAGS = {"--out-dir": 1, "--threads": 1, "--emit-manifest": 0, "--no-emit-manifest": 0}


def _strip_argv(argv):
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        flag = tok.split("=")[0]
        if flag in _STRIP_FLAGS:
            i += 1 + (_STRIP_FLAGS[flag] if "=" not in tok else 0)
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    import os

    if args.threads is None:
        args.threads = int(os.environ.get("MFGTOOLS_THREADS", "1"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = RUNNERS.get((args.module, args.verb))
    if runner is None:
        print(f"unknown subcommand {args.module} {args.verb}", file=sys.stderr)
        return 1
    t0 = time.time()
    try:
        code, artifacts = runner(args, out)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except MfgError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.emit_manifest:
        manifest = {
            "tool": "mfgtools",
            "version": __version__,
            "command": f"{args.module} {args.verb}",
            "argv": _strip_argv(argv),
            "seed": getattr(args, "seed", None),
            "threads": args.threads,
            "config": {
                k: v for k, v in sorted(vars(args).items())
                if k not in ("module", "verb", "out_dir", "emit_manifest", "threads") and not callable(v)
            },
            "artifacts": artifacts,
            "exit_code": code,
            "duration_seconds": time.time() - t0,
        }
        write_json(out / "manifest.json", manifest)
    return code


def rerun_manifest(manifest_path, out_dir, threads: int = 1) -> int:
    """Re-execute a stored manifest into a fresh directory; the numeric
    artifacts it lists are reproduced byte-for-byte for any thread count."""
    import json

    data = json.loads(Path(manifest_path).read_text())
    argv = list(data["argv"]) + ["--out-dir", str(out_dir), "--threads", str(threads), "--no-emit-manifest"]
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
