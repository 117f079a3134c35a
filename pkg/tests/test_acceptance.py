"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured quantities. Tolerances are pinned here and nowhere else.
"""
import json
import time

import numpy as np

from oracles import mdp_backward_induction

from mfgtools import bsk, cli, hjb, mkv
from mfgtools import nplayer as npl
from mfgtools.core import bundled, validate_scenario
from mfgtools.dynamics import (
    IntegratorConfig,
    RevisionProtocol,
    integrate_forward,
    protocol_to_kernel,
)


def report(num, name, detail):
    print(f"ACCEPTANCE {num} [{name}]: PASS ({detail})")


def elapsed_guard(t0, limit, num):
    dt = time.monotonic() - t0
    assert dt < limit, f"criterion {num} exceeded its runtime budget: {dt:.1f}s >= {limit}s"
    return dt


def test_01_simplex_conservation():
    t0 = time.monotonic()
    protocols = (("replicator", None), ("smith", None), ("bnn", None), ("smoothed-best-response", 0.1))
    worst_sum, worst_min = 0.0, 0.0
    for name in ("rps", "crowd", "anticoord"):
        model = bundled(name)
        for proto_name, eta in protocols:
            proto = RevisionProtocol.from_scenario(model, proto_name, temperature=eta)
            traj = integrate_forward(
                protocol_to_kernel(proto), model.m0[0], IntegratorConfig(step=1e-3, horizon=100.0)
            )
            worst_sum = max(worst_sum, float(np.abs(traj.values.sum(axis=2) - 1.0).max()))
            worst_min = min(worst_min, float(traj.values.min()))
            assert np.abs(traj.values.sum(axis=2) - 1.0).max() <= 1e-9
            assert traj.values.min() >= -1e-6
    dt = elapsed_guard(t0, 10.0, 1)
    report(1, "simplex conservation", f"|sum-1|<={worst_sum:.2e}, min mass {worst_min:.2e}, {dt:.1f}s")


def test_02_replicator_conserved_quantity():
    t0 = time.monotonic()
    model = bundled("rps")
    proto = RevisionProtocol.from_scenario(model, "replicator")
    traj = integrate_forward(protocol_to_kernel(proto), model.m0[0], IntegratorConfig(step=1e-3, horizon=50.0))
    prods = traj.values[:, 0, :].prod(axis=1)
    drift = float(np.abs(prods - prods[0]).max())
    assert drift <= 1e-6
    dt = elapsed_guard(t0, 5.0, 2)
    report(2, "replicator conserved product", f"max drift {drift:.2e} over T=50, {dt:.1f}s")


def test_03_bsk_vs_mdp_oracle():
    from test_bsk import constant_trajectory, table_scenario

    t0 = time.monotonic()
    rng = np.random.default_rng(31415)
    worst = 0.0
    for trial in range(20):
        nx = int(rng.integers(2, 5))  # |X| <= 4
        na = int(rng.integers(2, 4))  # |A| <= 3
        T = int(rng.integers(1, 9))  # T <= 8
        rewards = rng.integers(-40, 40, size=(T, nx, na)) / 8.0
        kernels = rng.dirichlet(np.ones(nx), size=(T, nx, na))
        terminal = rng.integers(-16, 16, size=nx) / 4.0
        model = table_scenario(kernels, rewards, terminal, m0=np.full(nx, 1.0 / nx))
        values, policy = bsk.backward_bellman(model, constant_trajectory(model))
        v_ref, a_ref = mdp_backward_induction(rewards.tolist(), kernels.tolist(), terminal.tolist())
        gap = float(np.abs(values.v[:, 0, :] - v_ref).max())
        worst = max(worst, gap)
        assert gap <= 1e-10, trial
        assert np.array_equal(policy.probs[:, 0, :, :].argmax(axis=2), a_ref), trial
    dt = elapsed_guard(t0, 5.0, 3)
    report(3, "BS-K vs MDP oracle", f"20 instances, max value gap {worst:.2e}, policies exact, {dt:.1f}s")


def test_04_fixed_point_self_consistency():
    t0 = time.monotonic()
    tol = 1e-8
    scenarios = [bundled(n) for n in ("crowd", "lottery", "smooth2", "iid2", "anticoord")]
    params = npl.CsmaParams(gamma=1.0, K=2, attempt=(1.0, 1.0, 1.0))
    scenarios.append(npl.csma_scenario(params, 1000, slots=200))
    converged_names = []
    for model in scenarios:
        sol = bsk.solve_bsk_fixed_point(model, bsk.FixedPointOptions(tol=tol))
        if not sol.converged:
            assert model.name == "anticoord"  # engineered oscillator
            continue
        converged_names.append(model.name)
        rep = bsk.verify_support_condition(model, sol, tol=1e-6)
        assert rep.ok, (model.name, rep.worst_gap)
        _, policy = bsk.backward_bellman(model, sol.mean_field)
        redo = bsk.forward_kolmogorov(model, policy)
        gap = sol.mean_field.sup_l1_distance(redo)
        assert gap <= 2 * tol, (model.name, gap)
    assert len(converged_names) >= 4
    dt = elapsed_guard(t0, 30.0, 4)
    report(4, "fixed-point self-consistency", f"converged: {', '.join(converged_names)}, {dt:.1f}s")


def test_05_risk_sensitive_oracle():
    t0 = time.monotonic()
    lottery = bundled("lottery")
    lottery4 = validate_scenario({
        "name": "lottery4", "mode": "discrete",
        "space": {"states": ["lo", "hi"], "actions": ["draw", "hold"]},
        "horizon": {"stages": 4},
        "initial": {"m0": [1.0, 0.0]},
        "kernel": {"family": "table", "values": [[[0.5, 0.5], [1.0, 0.0]], [[0.5, 0.5], [0.0, 1.0]]]},
        "payoff": {"family": "table", "values": [[0.0, 0.0], [1.0, 1.0]]},
    })
    worst = 0.0
    for model in (lottery, lottery4):
        sol = bsk.solve_bsk_fixed_point(model)
        for mu in (-1.0, -0.1, 0.1, 1.0):
            values, policy = bsk.risk_sensitive_backward(model, mu, sol.mean_field)
            oracle = bsk.enumerate_risk_value_oracle(model, mu, policy, sol.mean_field)
            gap = float(np.abs(values.v[0] - oracle).max())
            worst = max(worst, gap)
            assert gap <= 1e-10, (model.name, mu, gap)
        mu = 1e-2
        values, policy = bsk.risk_sensitive_backward(model, mu, sol.mean_field)
        mean, var = bsk.enumerate_reward_moments(model, policy, sol.mean_field)
        taylor_gap = np.abs(values.v[0] - (mean + 0.5 * mu * var))
        bound = 1e-3 * (1.0 + var)
        assert np.all(taylor_gap <= bound), (model.name, taylor_gap, bound)
    dt = elapsed_guard(t0, 10.0, 5)
    report(5, "risk-sensitive oracle", f"recursion==enumeration to {worst:.2e}; Taylor bound held, {dt:.1f}s")


def test_06_mfg_exploitability():
    t0 = time.monotonic()
    model = bundled("crowd_jump")
    sol1 = hjb.solve_mfg_fixed_point(model, dt=1e-3)
    assert sol1.converged
    eps1 = hjb.exploitability(model, sol1, 1e-3)
    assert eps1 <= 1e-4, eps1
    sol2 = hjb.solve_mfg_fixed_point(model, dt=5e-4)
    eps2 = hjb.exploitability(model, sol2, 5e-4)
    assert eps2 < eps1, (eps1, eps2)
    dt = elapsed_guard(t0, 60.0, 6)
    report(6, "MFG exploitability", f"eps(1e-3)={eps1:.3e} -> eps(5e-4)={eps2:.3e}, {dt:.1f}s")


def test_07_mean_field_convergence_rate():
    t0 = time.monotonic()
    model = bundled("smooth2")
    rep = npl.convergence_study(model, [100, 400, 1600], reps=200, seed=11, exact_init=True)
    assert -0.65 <= rep.slope <= -0.35, rep.slope
    dt = elapsed_guard(t0, 300.0, 7)
    report(7, "mean field convergence rate", f"fitted slope {rep.slope:.3f} in [-0.65, -0.35], {dt:.1f}s")


def test_08_propagation_of_chaos():
    t0 = time.monotonic()
    phi = np.array([1.0, 0.0])
    coupled = bundled("smooth2")
    study = npl.chaos_study(coupled, [100, 400, 1600], reps=200, phis=[phi, phi], t_index=12, seed=29)
    gaps = [r.gap for r in study.reports]
    assert gaps[2] < gaps[1] < gaps[0], gaps
    assert study.slope <= -0.3, study.slope
    decoupled = bundled("iid2")
    for n in (100, 400, 1600):
        emp = npl.simulate_nplayer(decoupled, npl.SimConfig(n=n, seed=13, reps=200, tagged=n))
        r = npl.chaos_test(emp.tagged_paths, [phi, phi], t_index=12)
        assert abs(r.gap) <= 3 * r.se, (n, r.gap, r.se)
    dt = elapsed_guard(t0, 300.0, 8)
    report(8, "propagation of chaos", f"slope {study.slope:.3f}, decoupled gaps within 3 SE, {dt:.1f}s")


def test_09_non_commutative_double_limit():
    t0 = time.monotonic()
    model = bundled("rps")
    A, _ = model.payoff.population_affine
    rep = npl.double_limit_experiment(
        A, model.m0[0], eps_mut=0.01, n=1000, T_long=100.0, reps=8, seed=7
    )
    assert rep.mf_min_distance_to_rest >= 0.05, rep.mf_min_distance_to_rest
    assert rep.ergodic_distance_to_rest <= 0.05, rep.ergodic_distance_to_rest
    dt = elapsed_guard(t0, 120.0, 9)
    report(
        9,
        "non-commutative double limit",
        f"mf orbit stays {rep.mf_min_distance_to_rest:.3f} away; ergodic average within "
        f"{rep.ergodic_distance_to_rest:.3f}, {dt:.1f}s",
    )


def test_10_mckean_vlasov_rate():
    t0 = time.monotonic()
    cfg = mkv.OuConfig(a=150.0, b=0.0, sigma=np.sqrt(300.0), mean0=0.0, var0=1.0)
    rep = mkv.rate_study(cfg, ns=[250, 1000, 4000], deltas=[2.5e-4, 1e-3, 4e-3], T=0.02, reps=48, seed=5)
    assert -0.65 <= rep.n_fit_slope <= -0.35, rep.n_fit_points
    assert 0.3 <= rep.delta_fit_slope <= 0.7, rep.delta_fit_points
    # particle variance at T=5 against the analytic law
    model = mkv.ou_model(1.0, 0.0, np.sqrt(2.0))
    paths = mkv.simulate_particles(model, 2000, 1e-3, 5.0, seed=42, init=(0.0, 1.0))
    _, ovar = mkv.ou_oracle(1.0, 0.0, np.sqrt(2.0), 0.0, 1.0, 5.0)
    sample = paths.final.var(ddof=1)
    se = ovar * np.sqrt(2.0 / (2000 - 1))
    assert abs(sample - ovar) <= 3 * se, (sample, ovar, se)
    dt = elapsed_guard(t0, 300.0, 10)
    report(
        10,
        "McKean-Vlasov rate",
        f"order in n {rep.n_fit_slope:.3f}, order in delta {rep.delta_fit_slope:.3f}, "
        f"variance z={(sample - ovar) / se:+.2f}, {dt:.1f}s",
    )


def test_11_csma_consistency():
    t0 = time.monotonic()
    params = npl.CsmaParams(gamma=1.0, beta2=0.0, beta3=0.0, K=2, attempt=(1.0, 1.0, 1.0))
    fixed = npl.csma_mean_field_fixed_point(params, 1000)
    sim = npl.simulate_csma(params, 1000, 100000, seed=5)
    l1 = float(np.abs(fixed - sim.stationary).sum())
    assert l1 <= 0.05, (fixed, sim.stationary, l1)
    dt = elapsed_guard(t0, 120.0, 11)
    report(11, "CSMA consistency", f"L1(sim, mean field fixed point) = {l1:.4f}, {dt:.1f}s")


def test_12_manifest_reproducibility(tmp_path):
    t0 = time.monotonic()
    commands = [
        ["dynamics", "run", "--scenario", "rps", "--T", "0.5", "--csv-stride", "50"],
        ["dynamics", "restpoints", "--scenario", "rps", "--n-seeds", "2"],
        ["bsk", "solve", "--scenario", "lottery"],
        ["mfg", "solve", "--scenario", "crowd_jump", "--dt", "0.01", "--csv-stride", "10"],
        ["mfg", "control", "--scenario", "crowd_jump", "--grid-k", "4", "--dt", "0.05"],
        ["nplayer", "run", "--scenario", "smooth2", "--n", "40", "--reps", "3"],
        ["nplayer", "rate", "--scenario", "smooth2", "--ns", "50,100,200", "--reps", "30"],
        ["nplayer", "chaos", "--scenario", "smooth2", "--ns", "50,100", "--reps", "40"],
        ["nplayer", "doublelimit", "--scenario", "rps", "--n", "100", "--T", "10", "--reps", "2"],
        ["nplayer", "csma", "--n", "100", "--slots", "5000"],
        ["mkv", "run", "--model", "ou", "--n", "40", "--T", "0.05", "--dt", "0.005"],
        ["mkv", "rate", "--model", "ou", "--ns", "50,100", "--deltas", "0.004,0.002",
         "--reps", "30", "--T", "0.02", "--a", "150", "--sigma", "17.320508075688775"],
    ]
    for i, cmd in enumerate(commands):
        out_a = tmp_path / f"a{i}"
        code = cli.main(cmd + ["--out-dir", str(out_a)])
        assert code == 0, cmd
        manifest = json.loads((out_a / "manifest.json").read_text())
        out_b = tmp_path / f"b{i}"
        assert cli.rerun_manifest(out_a / "manifest.json", out_b, threads=2) == 0
        for name in manifest["artifacts"]:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), (cmd, name)
    # bsk verify closes the loop on a stored solution
    out_v = tmp_path / "verify"
    code = cli.main(
        ["bsk", "verify", "--scenario", "lottery", "--solution", str(tmp_path / "a2" / "solution.json"),
         "--out-dir", str(out_v)]
    )
    assert code == 0
    dt = elapsed_guard(t0, 60.0, 12)
    report(12, "manifest reproducibility", f"{len(commands)} commands byte-identical under threads=2, {dt:.1f}s")
