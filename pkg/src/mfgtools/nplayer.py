"""Finite-population Monte Carlo harness.

Simulators are count-based: players within a (type, state) cell are
exchangeable, so per-stage transitions are multinomial draws over cells and
the cost is independent of n. Tagged players (whose individual paths are
recorded) are sampled alongside, grouped by state; the empirical trajectory
is a pure function of (scenario, config), so it is invariant under any
relabelling of players within a type by construction.

Discrete mode steps all players synchronously with q(., M^n_t). Continuous
mode gives each player an independent exponential revision clock of rate
``clock_rate`` and thins the generator through it (uniformization): at a
revision opportunity the player jumps to x' with probability
qbar[x, a, x'] / clock_rate, so the effective jump rates are exactly the
generator's whenever total outflow rates stay below ``clock_rate``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import log
from typing import Optional, Sequence

import numpy as np

from .core.ops import policy_averaged_kernel
from .core.types import (
    CONTINUOUS,
    DISCRETE,
    Horizon,
    MeanFieldTrajectory,
    PayoffSpec,
    PolicyTrajectory,
    ScenarioModel,
    StateSpace,
    TransitionKernelSpec,
)
from .errors import (
    GridMismatch,
    InsufficientReplications,
    InvalidProbability,
    KernelProbeFailure,
    ShapeMismatch,
)

MIN_REPLICATIONS = 30


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: population size (per type), seeding, replication
    count, horizon override, tagging, and the continuous-mode clock rate."""

    n: int
    seed: int = 0
    reps: int = 1
    tagged: int = 0
    exact_init: bool = False
    clock_rate: float = 1.0
    record_dt: Optional[float] = None  # continuous mode output grid step
    horizon: Optional[float] = None  # override scenario horizon (continuous T or stages)

    def __post_init__(self):
        if self.n < 1 or self.reps < 1:
            raise ShapeMismatch("need n >= 1 and reps >= 1")
        if self.tagged < 0 or self.tagged > self.n:
            raise ShapeMismatch("tagged count must lie in [0, n]")
        if self.clock_rate <= 0:
            raise ShapeMismatch("clock rate must be positive")


@dataclass
class EmpiricalTrajectory:
    """Per-replication empirical profiles (stored as integer counts, so the
    masses are exact multiples of 1/n) plus optional tagged player paths."""

    grid: np.ndarray
    counts: np.ndarray  # (reps, nt, n_types, nx) int64
    n: int
    tagged_paths: Optional[np.ndarray] = None  # (reps, k, nt) int16, type 0

    @property
    def profiles(self) -> np.ndarray:
        return self.counts / float(self.n)

    def mean_profile(self) -> np.ndarray:
        """Replication average, aggregated in fixed replication order."""
        acc = np.zeros(self.counts.shape[1:], dtype=float)
        for r in range(self.counts.shape[0]):
            acc += self.counts[r]
        return acc / (self.n * self.counts.shape[0])


def _pool_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), int(rep)]))


def _largest_remainder(n: int, p: np.ndarray) -> np.ndarray:
    """Deterministic rounding of n*p to integers summing to n."""
    raw = n * np.asarray(p, dtype=float)
    base = np.floor(raw).astype(int)
    short = n - int(base.sum())
    frac = raw - base
    order = np.argsort(-frac, kind="stable")
    base[order[:short]] += 1
    return base


def _initial_counts(model: ScenarioModel, cfg: SimConfig, rng: np.random.Generator):
    """(counts, tagged_states); tagged players belong to type 0 and are part
    of the counts."""
    space = model.space
    counts = np.zeros((space.n_types, space.n_states), dtype=np.int64)
    k = cfg.tagged
    for ti in range(space.n_types):
        pool = cfg.n - (k if ti == 0 else 0)
        if cfg.exact_init:
            full = _largest_remainder(cfg.n, model.m0[ti])
            if ti == 0 and k > 0:
                tagged_states = np.repeat(np.arange(space.n_states), full)[:k].astype(np.int16)
                counts[ti] = full
            else:
                counts[ti] = full
        else:
            counts[ti] = rng.multinomial(pool, _safe_pvals(model.m0[ti]))
            if ti == 0 and k > 0:
                tagged_states = rng.choice(space.n_states, size=k, p=_safe_pvals(model.m0[0])).astype(np.int16)
                np.add.at(counts[ti], tagged_states, 1)
    if k == 0:
        tagged_states = np.zeros(0, dtype=np.int16)
    return counts, tagged_states


def _safe_pvals(row: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(row, dtype=float), 0.0)
    s = p.sum()
    if not np.isfinite(s) or s <= 0:
        raise KernelProbeFailure(f"invalid probability row {row}")
    return p / s


def _check_discrete_row(row: np.ndarray):
    if row.min() < -1e-9 or abs(row.sum() - 1.0) > 1e-9:
        raise KernelProbeFailure(f"kernel row invalid at encountered profile: {row}")


def _policy_at(policy, t: int, ti: int, na: int, nx: int) -> np.ndarray:
    if policy is None:
        if na != 1:
            raise ShapeMismatch("scenario has multiple actions; a policy is required")
        return np.ones((nx, 1))
    if isinstance(policy, PolicyTrajectory):
        return policy.probs[t, ti, :, :na]
    # stationary (n_types, nx, na) or (nx, na) array
    arr = np.asarray(policy, dtype=float)
    if arr.ndim == 2:
        return arr[:, :na]
    return arr[ti, :, :na]


def simulate_nplayer(model: ScenarioModel, cfg: SimConfig, policy=None) -> EmpiricalTrajectory:
    """Simulate the interacting system; replication r uses the RNG stream
    derived from (seed, r), so outputs are reproducible and independent of
    how replications are scheduled."""
    if model.kernel is None:
        raise ShapeMismatch(f"scenario {model.name!r} has no kernel to simulate")
    if model.kernel.mode == DISCRETE:
        return _simulate_discrete(model, cfg, policy)
    return _simulate_continuous(model, cfg, policy)


def _simulate_discrete(model: ScenarioModel, cfg: SimConfig, policy) -> EmpiricalTrajectory:
    space = model.space
    T = int(cfg.horizon) if cfg.horizon is not None else model.horizon.stages
    nx = space.n_states
    nt = T + 1
    all_counts = np.zeros((cfg.reps, nt, space.n_types, nx), dtype=np.int64)
    all_tagged = np.zeros((cfg.reps, cfg.tagged, nt), dtype=np.int16) if cfg.tagged else None

    for rep in range(cfg.reps):
        rng = _pool_rng(cfg.seed, rep)
        counts, tag_states = _initial_counts(model, cfg, rng)
        all_counts[rep, 0] = counts
        if cfg.tagged:
            all_tagged[rep, :, 0] = tag_states
        for t in range(T):
            M = counts / float(cfg.n)
            new_counts = np.zeros_like(counts)
            new_tag = np.empty_like(tag_states)
            q_cache = {}
            for ti in range(space.n_types):
                na = space.max_actions(ti)
                q = model.kernel(ti, t, M)
                q_cache[ti] = q
                u = _policy_at(policy, t, ti, na, nx)
                tag_occ = np.zeros(nx, dtype=np.int64)
                if ti == 0 and cfg.tagged:
                    np.add.at(tag_occ, tag_states, 1)
                for x in range(nx):
                    pool = int(counts[ti, x] - tag_occ[x])
                    if pool > 0:
                        acts = rng.multinomial(pool, _safe_pvals(u[x]))
                        for a in range(space.n_actions(ti, x)):
                            if acts[a] == 0:
                                continue
                            row = q[x, a]
                            _check_discrete_row(row)
                            new_counts[ti] += rng.multinomial(int(acts[a]), _safe_pvals(row))
                    if ti == 0 and tag_occ[x] > 0:
                        sel = np.nonzero(tag_states == x)[0]
                        a_draw = rng.choice(u.shape[1], size=sel.size, p=_safe_pvals(u[x]))
                        for a in range(space.n_actions(ti, x)):
                            members = sel[a_draw == a]
                            if members.size == 0:
                                continue
                            row = q[x, a]
                            _check_discrete_row(row)
                            dest = rng.choice(nx, size=members.size, p=_safe_pvals(row))
                            new_tag[members] = dest.astype(np.int16)
                            np.add.at(new_counts[ti], dest, 1)
            counts = new_counts
            if cfg.tagged:
                tag_states = new_tag
                all_tagged[rep, :, t + 1] = tag_states
            all_counts[rep, t + 1] = counts
    grid = np.arange(nt, dtype=float)
    return EmpiricalTrajectory(grid=grid, counts=all_counts, n=cfg.n, tagged_paths=all_tagged)


def _simulate_continuous(
    model: ScenarioModel, cfg: SimConfig, policy, accumulate_window=None
) -> EmpiricalTrajectory:
    """Uniformized event-driven simulation; optionally accumulates the exact
    time average of the empirical profile over a window (used by the
    double-limit study). The window average is stored in ``.window_average``.
    """
    space = model.space
    T = float(cfg.horizon) if cfg.horizon is not None else model.horizon.T
    rec = cfg.record_dt if cfg.record_dt is not None else T / 200.0
    n_rec = int(round(T / rec))
    if abs(n_rec * rec - T) > 1e-9 * max(1.0, T):
        raise GridMismatch("record_dt must divide the horizon")
    grid = np.arange(n_rec + 1) * rec
    nx = space.n_states
    n_total = cfg.n * space.n_types
    lam = cfg.clock_rate
    all_counts = np.zeros((cfg.reps, n_rec + 1, space.n_types, nx), dtype=np.int64)
    window_avgs = np.zeros((cfg.reps, space.n_types, nx))
    if cfg.tagged:
        raise ShapeMismatch("tagged paths are supported in discrete mode only")

    static_rows = None
    if not model.kernel.m_dependent and not isinstance(policy, PolicyTrajectory):
        static_rows = _mixed_jump_rows(model, policy, 0.0, np.array(model.m0), lam)

    for rep in range(cfg.reps):
        rng = _pool_rng(cfg.seed, rep)
        counts, _ = _initial_counts(model, cfg, rng)
        t = 0.0
        rec_i = 0
        acc = np.zeros((space.n_types, nx))
        w0, w1 = accumulate_window if accumulate_window else (0.0, 0.0)
        gaps = rng.exponential(scale=1.0 / (n_total * lam), size=4096)
        unis = rng.random(size=8192)
        gi = ui = 0
        while True:
            if gi >= gaps.size:
                gaps = rng.exponential(scale=1.0 / (n_total * lam), size=4096)
                gi = 0
            t_next = t + gaps[gi]
            gi += 1
            while rec_i <= n_rec and grid[rec_i] < t_next - 1e-15:
                all_counts[rep, rec_i] = counts
                rec_i += 1
            if accumulate_window:
                lo, hi = max(t, w0), min(t_next, w1)
                if hi > lo:
                    acc += (hi - lo) * counts
            if t_next >= T:
                while rec_i <= n_rec:
                    all_counts[rep, rec_i] = counts
                    rec_i += 1
                break
            if ui + 2 > unis.size:
                unis = rng.random(size=8192)
                ui = 0
            # pick the revising player's cell proportionally to counts
            target = unis[ui] * n_total
            ui += 1
            cum = 0.0
            ti = x = 0
            for tii in range(space.n_types):
                for xi in range(nx):
                    cum += counts[tii, xi]
                    if target < cum:
                        ti, x = tii, xi
                        break
                else:
                    continue
                break
            if static_rows is not None:
                probs = static_rows[ti][x]
            else:
                M = counts / float(cfg.n)
                probs = _mixed_jump_rows(model, policy, t_next, M, lam)[ti][x]
            # thinned jump: cumulative over destinations, remainder = stay
            udraw = unis[ui]
            ui += 1
            cumj = 0.0
            dest = x
            for y in range(nx):
                cumj += probs[y]
                if udraw < cumj:
                    dest = y
                    break
            if dest != x:
                counts[ti, x] -= 1
                counts[ti, dest] += 1
            t = t_next
        if accumulate_window and w1 > w0:
            window_avgs[rep] = acc / ((w1 - w0) * cfg.n)
    traj = EmpiricalTrajectory(grid=grid, counts=all_counts, n=cfg.n)
    traj.window_average = window_avgs
    return traj


def _mixed_jump_rows(model: ScenarioModel, policy, t: float, M: np.ndarray, lam: float):
    """Per-type (nx, nx) arrays of thinned jump probabilities: off-diagonal
    generator rates averaged over the (stationary) policy, divided by the
    clock rate; diagonal entries are zeroed (remainder = stay)."""
    space = model.space
    rows = []
    for ti in range(space.n_types):
        na = space.max_actions(ti)
        u = _policy_at(policy, 0, ti, na, space.n_states)
        q = model.kernel(ti, t, M)
        L = policy_averaged_kernel(q, u)
        P = L / lam
        np.fill_diagonal(P, 0.0)
        if P.min() < -1e-12:
            raise KernelProbeFailure(f"negative jump rate at profile {M[ti]}")
        out_mass = P.sum(axis=1)
        if out_mass.max() > 1.0 + 1e-9:
            raise KernelProbeFailure(
                f"total outflow rate {out_mass.max() * lam:.3g} exceeds the clock rate {lam}; raise clock_rate"
            )
        rows.append(np.maximum(P, 0.0))
    return rows


# --------------------------------------------------------------------------
# metrics and studies
# --------------------------------------------------------------------------

def l1_trajectory_distance(emp: EmpiricalTrajectory, mft: MeanFieldTrajectory, rep: int = 0) -> float:
    """sup over the grid of the L1 distance between one replication's
    empirical profile and the mean field trajectory; lies in [0, 2]."""
    if emp.grid.size != mft.n_points or not np.allclose(emp.grid, mft.grid, atol=1e-9):
        raise GridMismatch("empirical and mean field trajectories live on different grids")
    diff = np.abs(emp.profiles[rep] - mft.values).sum(axis=(1, 2))
    return float(diff.max())


@dataclass
class RateStudyReport:
    ns: list
    means: list
    ses: list
    slope: float
    intercept: float
    per_n_distances: dict = field(default_factory=dict)


def reference_trajectory(model: ScenarioModel, policy=None, record_dt: Optional[float] = None) -> MeanFieldTrajectory:
    """Deterministic mean field trajectory matching the simulator's grid."""
    if model.kernel.mode == DISCRETE:
        from .bsk import forward_kolmogorov

        T = model.horizon.stages
        if policy is None:
            na = max(model.space.max_actions(ti) for ti in range(model.space.n_types))
            if na != 1:
                raise ShapeMismatch("multi-action scenario needs an explicit policy")
            policy = PolicyTrajectory(np.ones((T, model.space.n_types, model.space.n_states, 1)))
        elif not isinstance(policy, PolicyTrajectory):
            policy = PolicyTrajectory.stationary(np.asarray(policy), T)
        return forward_kolmogorov(model, policy)
    from .hjb import forward_kfe

    T = model.horizon.T
    rec = record_dt if record_dt is not None else T / 200.0
    n_steps = int(round(T / rec))
    na = max(model.space.max_actions(ti) for ti in range(model.space.n_types))
    if policy is None:
        if na != 1:
            raise ShapeMismatch("multi-action scenario needs an explicit policy")
        ptraj = PolicyTrajectory(np.ones((n_steps, model.space.n_types, model.space.n_states, 1)))
    elif isinstance(policy, PolicyTrajectory):
        ptraj = policy
    else:
        ptraj = PolicyTrajectory.stationary(np.asarray(policy), n_steps)
    return forward_kfe(model, ptraj, dt=rec)


def convergence_study(
    model: ScenarioModel,
    ns: Sequence,
    reps: int,
    seed: int = 0,
    policy=None,
    exact_init: bool = True,
    clock_rate: float = 1.0,
    record_dt: Optional[float] = None,
    threads: int = 1,
) -> RateStudyReport:
    """Monte Carlo estimate of E sup_t ||M^n - m||_1 per n plus the fitted
    log-log slope against n. The per-n points are independent jobs; results
    do not depend on the worker count."""
    from ._util import ordered_map

    ns = list(ns)
    if len(ns) < 3 or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ShapeMismatch("need at least 3 strictly increasing population sizes")
    if reps < MIN_REPLICATIONS:
        raise InsufficientReplications(f"need at least {MIN_REPLICATIONS} replications, got {reps}")
    ref = reference_trajectory(model, policy, record_dt)

    def one_n(n):
        cfg = SimConfig(n=n, seed=seed, reps=reps, exact_init=exact_init, clock_rate=clock_rate, record_dt=record_dt)
        emp = simulate_nplayer(model, cfg, policy)
        return np.array([l1_trajectory_distance(emp, ref, rep=r) for r in range(reps)])

    results = ordered_map(one_n, ns, threads)
    means, ses, per_n = [], [], {}
    for n, dists in zip(ns, results):
        means.append(float(dists.mean()))
        ses.append(float(dists.std(ddof=1) / np.sqrt(reps)))
        per_n[n] = dists
    slope, intercept = np.polyfit(np.log(ns), np.log(means), 1)
    return RateStudyReport(ns=ns, means=means, ses=ses, slope=float(slope), intercept=float(intercept), per_n_distances=per_n)


@dataclass
class ChaosReport:
    gap: float
    se: float
    product_moment: float
    marginal_product: float
    n: int
    reps: int


def chaos_test(tagged_paths: np.ndarray, phis: Sequence, t_index: int) -> ChaosReport:
    """Estimate E prod_j phi_j(x_j) - prod_j E phi_j(x_j) at one time.

    The product moment is the exact U-statistic over ordered tuples of
    distinct recorded players (pairs for k = 2; disjoint consecutive tuples
    for k > 2), averaged over replications. The marginal product uses the
    across-replication means, so the O(1/sqrt(n)) empirical-measure
    fluctuation cancels between the two terms to first order and the
    estimator resolves gaps of order 1/n. The standard error is the
    leave-one-replication-out jackknife.
    """
    R, P, _ = tagged_paths.shape
    k = len(phis)
    if k < 2 or P < k:
        raise ShapeMismatch("need at least 2 test functions and as many recorded players")
    states = tagged_paths[:, :, t_index]
    vals = [np.asarray(phi, dtype=float)[states] for phi in phis]  # each (R, P)
    if k == 2:
        s1, s2 = vals[0].sum(axis=1), vals[1].sum(axis=1)
        cross = (vals[0] * vals[1]).sum(axis=1)
        u = (s1 * s2 - cross) / (P * (P - 1))
    else:
        m = P // k
        prod = np.ones((R, m))
        for j in range(k):
            prod = prod * vals[j][:, j * m : (j + 1) * m]
        u = prod.mean(axis=1)
    margs = np.stack([v.mean(axis=1) for v in vals])  # (k, R)

    def statistic(mask):
        prod_means = 1.0
        for j in range(k):
            prod_means *= float(margs[j, mask].mean())
        return float(u[mask].mean()) - prod_means

    full = statistic(np.ones(R, dtype=bool))
    if R > 1:
        loo = np.empty(R)
        for r in range(R):
            mask = np.ones(R, dtype=bool)
            mask[r] = False
            loo[r] = statistic(mask)
        se = float(np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))
    else:
        se = float("inf")
    prod_means = 1.0
    for j in range(k):
        prod_means *= float(margs[j].mean())
    return ChaosReport(
        gap=full, se=se, product_moment=float(u.mean()), marginal_product=prod_means, n=P, reps=R
    )


@dataclass
class ChaosStudy:
    ns: list
    reports: list
    slope: float


def chaos_study(
    model: ScenarioModel, ns: Sequence, reps: int, phis: Sequence, t_index: int, seed: int = 0
) -> ChaosStudy:
    """Chaos gaps across population sizes with a log-log decay fit
    (gaps floored at 1e-12 for the fit)."""
    reports = []
    for n in ns:
        cfg = SimConfig(n=n, seed=seed, reps=reps, tagged=n)
        emp = simulate_nplayer(model, cfg)
        reports.append(chaos_test(emp.tagged_paths, phis, t_index))
    gaps = np.maximum([abs(r.gap) for r in reports], 1e-12)
    slope = float(np.polyfit(np.log(ns), np.log(gaps), 1)[0])
    return ChaosStudy(ns=list(ns), reports=reports, slope=slope)


# --------------------------------------------------------------------------
# double limit (t -> inf vs n -> inf)
# --------------------------------------------------------------------------

@dataclass
class DoubleLimitReport:
    rest_point: np.ndarray
    mf_min_distance_to_rest: float
    ergodic_average: np.ndarray
    ergodic_distance_to_rest: float
    n: int
    eps_mut: float


def replicator_mutation_scenario(payoff_matrix: np.ndarray, eps_mut: float, m0: np.ndarray, T: float) -> ScenarioModel:
    """Uncontrolled continuous scenario whose generator is the replicator
    pairwise-imitation kernel plus uniform mutation at rate eps_mut."""
    A = np.asarray(payoff_matrix, dtype=float)
    nx = A.shape[0]
    space = StateSpace.build([f"s{i}" for i in range(nx)], actions=("act",))

    def gen(ti, t, m):
        r = A @ m[0]
        L = m[0][None, :] * np.maximum(r[None, :] - r[:, None], 0.0)
        if eps_mut > 0:
            L = L + eps_mut / (nx - 1)
        np.fill_diagonal(L, 0.0)
        q = L - np.diag(L.sum(axis=1))
        return q[:, None, :]

    payoff = PayoffSpec(population=lambda ti, m: A @ m[0], population_affine=(A, np.zeros(nx)))
    return ScenarioModel(
        space=space,
        kernel=TransitionKernelSpec(mode=CONTINUOUS, func=gen, m_dependent=True),
        payoff=payoff,
        horizon=Horizon(T=T, dt=1e-3),
        m0=m0[None, :],
        name="replicator-mutation",
    )


def double_limit_experiment(
    payoff_matrix: np.ndarray,
    m0: np.ndarray,
    eps_mut: float,
    n: int,
    T_long: float,
    reps: int = 5,
    seed: int = 0,
    clock_rate: float = 4.0,
) -> DoubleLimitReport:
    """Exhibit the non-commuting double limit on a cycling population game.

    (i) integrates the deterministic flow (no mutation) from m0 and reports
    its minimum L1 distance to the interior rest point over [T/2, T];
    (ii) simulates the finite-n chain (with mutation, so it is irreducible)
    and reports the distance of the exact time-averaged empirical profile
    over the same window, averaged over replications.
    """
    from .dynamics import IntegratorConfig, RevisionProtocol, find_rest_points, integrate_forward, protocol_to_kernel

    A = np.asarray(payoff_matrix, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    nx = A.shape[0]
    proto = RevisionProtocol(name="replicator", payoff=lambda m: A @ m, affine=(A, np.zeros(nx)))
    kern = protocol_to_kernel(proto)
    uniform = np.full(nx, 1.0 / nx)
    search = find_rest_points(kern, [uniform], tol=1e-8)
    rest = search.points[0] if search.points else uniform

    traj = integrate_forward(kern, m0, IntegratorConfig(step=1e-3, horizon=T_long))
    half = traj.values.shape[0] // 2
    mf_min = float(np.abs(traj.values[half:, 0, :] - rest[None, :]).sum(axis=1).min())

    from ._compiled import replicator_mutation_window

    counts0 = _largest_remainder(n, m0)
    avgs = np.zeros((reps, nx))
    for rep in range(reps):
        # numba uses its own seeded stream; derive one deterministic 32-bit
        # seed per replication
        rep_seed = int(np.random.SeedSequence(entropy=[int(seed), rep]).generate_state(1)[0])
        avg, status = replicator_mutation_window(
            A, float(eps_mut), counts0, float(T_long), float(clock_rate), T_long / 2.0, float(T_long), rep_seed
        )
        if status != 0:
            raise KernelProbeFailure("replicator rates exceeded the clock rate; raise clock_rate")
        avgs[rep] = avg
    erg = avgs.mean(axis=0)
    erg_dist = float(np.abs(erg - rest).sum())
    return DoubleLimitReport(
        rest_point=rest,
        mf_min_distance_to_rest=mf_min,
        ergodic_average=erg,
        ergodic_distance_to_rest=erg_dist,
        n=n,
        eps_mut=eps_mut,
    )


# --------------------------------------------------------------------------
# CSMA backoff
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CsmaParams:
    """Backoff-chain parameters: a node in state x attempts transmission with
    probability attempt[x] / (gamma*n + beta2 + beta3*ln n) per slot; success
    resets to state 0, a failed attempt advances to (x+1) mod (K+1)."""

    gamma: float = 1.0
    beta2: float = 0.0
    beta3: float = 0.0
    K: int = 2
    attempt: tuple = (1.0,)

    def __post_init__(self):
        if self.K < 0:
            raise ShapeMismatch("K must be >= 0")
        if self.gamma < 0 or self.beta2 < 0 or self.beta3 < 0:
            raise ShapeMismatch("scaling coefficients must be nonnegative")
        att = tuple(float(v) for v in self.attempt)
        if len(att) == 1:
            att = att * (self.K + 1)
        if len(att) != self.K + 1:
            raise ShapeMismatch(f"need one attempt level per backoff state (K+1={self.K + 1})")
        object.__setattr__(self, "attempt", att)

    def denominator(self, n: int) -> float:
        d = self.gamma * n + self.beta2 + self.beta3 * log(n)
        if d <= 0:
            raise InvalidProbability(f"gamma*n + beta2 + beta3*ln(n) = {d} must be positive")
        return d

    def attempt_probs(self, n: int) -> np.ndarray:
        p = np.asarray(self.attempt, dtype=float) / self.denominator(n)
        if p.min() < 0.0 or p.max() > 1.0:
            raise InvalidProbability(f"attempt probability outside [0, 1]: {p}")
        return p


def csma_mean_field_kernel(params: CsmaParams, n: int) -> TransitionKernelSpec:
    """Mean field backoff kernel: an attempting node succeeds with the
    n -> infinity exponential limit of the independent-attempt product,
    s(m) = exp(-n sum_x m(x) p_x)."""
    p = params.attempt_probs(n)
    K = params.K

    def func(ti, t, m):
        s = float(np.exp(-n * float(m[ti] @ p)))
        nx = K + 1
        q = np.zeros((nx, 1, nx))
        for x in range(nx):
            nxt = (x + 1) % nx
            q[x, 0, 0] += p[x] * s
            q[x, 0, nxt] += p[x] * (1.0 - s)
            q[x, 0, x] += 1.0 - p[x]
        return q

    return TransitionKernelSpec(mode=DISCRETE, func=func, m_dependent=True)


def csma_scenario(params: CsmaParams, n: int, slots: int = 100000, m0: Optional[np.ndarray] = None) -> ScenarioModel:
    """Discrete scenario housing the CSMA mean field model for n nodes."""
    K = params.K
    params.attempt_probs(n)  # validates
    space = StateSpace.build([f"b{i}" for i in range(K + 1)], actions=("act",))
    if m0 is None:
        m0 = np.zeros(K + 1)
        m0[0] = 1.0
    payoff = PayoffSpec(running=lambda ti, t, m: np.zeros((K + 1, 1)))
    return ScenarioModel(
        space=space,
        kernel=csma_mean_field_kernel(params, n),
        payoff=payoff,
        horizon=Horizon(stages=slots),
        m0=np.asarray(m0, dtype=float)[None, :],
        name="csma",
    )


def csma_mean_field_fixed_point(params: CsmaParams, n: int, tol: float = 1e-12, max_iters: int = 200000) -> np.ndarray:
    """Stationary profile of the mean field backoff map (damped iteration)."""
    kernel = csma_mean_field_kernel(params, n)
    nx = params.K + 1
    m = np.full(nx, 1.0 / nx)
    for _ in range(max_iters):
        q = kernel(0, 0, m[None, :])
        nxt = m @ q[:, 0, :]
        new = 0.5 * (m + nxt)
        if np.abs(new - m).sum() <= tol:
            return new
        m = new
    return m


@dataclass
class CsmaSimResult:
    stationary: np.ndarray  # time-averaged profile over the second half
    final_counts: np.ndarray
    slots: int
    n: int
    snapshots: np.ndarray  # (n_snap, K+1) profiles
    snapshot_slots: np.ndarray


def simulate_csma(
    params: CsmaParams,
    n: int,
    slots: int,
    seed: int = 0,
    m0: Optional[np.ndarray] = None,
    snapshot_every: int = 1000,
) -> CsmaSimResult:
    """Exact slotted simulation: attempts are conditionally independent given
    the profile; an attempt succeeds iff no other node attempts in the slot.
    """
    p = params.attempt_probs(n)
    K = params.K
    nx = K + 1
    rng = _pool_rng(seed, 0)
    if m0 is None:
        counts = np.zeros(nx, dtype=np.int64)
        counts[0] = n
    else:
        counts = _largest_remainder(n, np.asarray(m0, dtype=float))
    half = slots // 2
    acc = np.zeros(nx)
    snaps = []
    snap_slots = []
    for s in range(slots):
        attempts = rng.binomial(counts, p)
        total = int(attempts.sum())
        if total == 1:
            x = int(np.nonzero(attempts)[0][0])
            counts[x] -= 1
            counts[0] += 1
        elif total >= 2:
            moved = attempts.copy()
            counts = counts - moved
            counts = counts + np.roll(moved, 1)  # (x+1) mod (K+1)
        if s >= half:
            acc += counts
        if s % snapshot_every == 0:
            snaps.append(counts / float(n))
            snap_slots.append(s)
    stationary = acc / (float(slots - half) * n)
    return CsmaSimResult(
        stationary=stationary,
        final_counts=counts.copy(),
        slots=slots,
        n=n,
        snapshots=np.array(snaps),
        snapshot_slots=np.array(snap_slots),
    )
