"""Continuous-time finite-state differential population game solver.

The value is computed along the equilibrium trajectory only: with
v~_t(x) := v_t(x, m*_t), the profile-gradient term of the full backward
equation is exactly the chain-rule correction between the partial and the
along-trajectory time derivative, and it does not involve the decision
variable, so the backward system closes as an ODE in (t, x):

    dv~_t(x)/dt = -sup_a { r_t(x, a, m_t)
                           + sum_{x' != x} qbar[x, a, x'](m_t) (v~_t(x') - v~_t(x)) }

Both passes use classic RK4 on a shared uniform grid; policies are held
piecewise-constant on grid intervals.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Optional

import numpy as np

from .bsk import FixedPointOptions, MfeSolution, ValueTable, _policy_from_candidates
from .core.ops import policy_averaged_kernel, random_profiles
from .core.types import (
    CONTINUOUS,
    MeanFieldTrajectory,
    PolicyTrajectory,
    ScenarioModel,
    clamp_profile,
)
from .errors import (
    DriftGeneratorMismatch,
    GridMismatch,
    NonFiniteValue,
    OffSimplexStep,
    ShapeMismatch,
    StateTooLarge,
)


@dataclass(frozen=True)
class MfDriftSpec:
    """Explicit mean-field drift f(ti, t, u, m) -> (nx,), tangent to the simplex."""

    func: Callable

    def __call__(self, ti, t, u, m):
        out = np.asarray(self.func(ti, t, u, m), dtype=float)
        return out


def _uniform_grid(model: ScenarioModel, dt: float):
    T = model.horizon.T
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T) or n_steps < 1:
        raise GridMismatch(f"T={T} is not an integer multiple of dt={dt}")
    return np.arange(n_steps + 1) * dt, n_steps


def _check_traj_grid(m_traj: MeanFieldTrajectory, grid: np.ndarray):
    if m_traj.n_points != grid.size or not np.allclose(m_traj.grid, grid, atol=1e-12):
        raise GridMismatch("mean field trajectory grid does not match the dt grid")


def generator_drift(model: ScenarioModel, ti: int, t: float, u: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Forward drift induced by the generator under per-state action mix u."""
    L = policy_averaged_kernel(model.kernel(ti, t, m), u)
    return m[ti] @ L


def validate_explicit_drift(model: ScenarioModel, drift: MfDriftSpec, n_probes: int = 5):
    """An explicit drift must agree with the generator-induced one (1e-8 at probes)."""
    probes = np.concatenate([model.m0[None], random_profiles(model.space, n_probes)])
    for m in probes:
        for ti in range(model.space.n_types):
            na = model.space.max_actions(ti)
            u = np.full((model.space.n_states, na), 1.0 / na)
            f_explicit = drift(ti, 0.0, u, m)
            if abs(float(f_explicit.sum())) > 1e-8:
                raise DriftGeneratorMismatch("explicit drift is not tangent to the simplex")
            if model.kernel is not None:
                f_gen = generator_drift(model, ti, 0.0, u, m)
                if np.abs(f_explicit - f_gen).max() > 1e-8:
                    raise DriftGeneratorMismatch(
                        f"explicit drift differs from generator-induced drift by {np.abs(f_explicit - f_gen).max():.3g}"
                    )


def _hamiltonian(model: ScenarioModel, ti: int, t: float, m: np.ndarray, v: np.ndarray):
    """sup_a candidates and the sup itself; rows of qbar sum to zero, so the
    jump term is the plain row-dot with v."""
    q = model.kernel(ti, t, m)
    r = model.running_payoff(ti, t, m)
    mask = model.space.action_mask(ti)
    cand = r + np.einsum("xay,y->xa", q, v)
    cand = np.where(mask, cand, -np.inf)
    return cand, mask


def backward_hjb(model: ScenarioModel, m_traj: MeanFieldTrajectory, dt: float) -> tuple:
    """RK4 backward integration of the along-trajectory value ODE.

    The maximization is re-evaluated at every RK4 substep (profiles at half
    steps are linear interpolants of the grid trajectory). Policies are the
    per-(t, x) maximizers at grid times, tie-broken at the lowest action
    index; the last interval's policy sits at index nt-2.
    """
    model.require_mode(CONTINUOUS)
    grid, n_steps = _uniform_grid(model, dt)
    _check_traj_grid(m_traj, grid)
    space = model.space
    na_all = max(space.max_actions(ti) for ti in range(space.n_types))
    v = np.zeros((n_steps + 1, space.n_types, space.n_states))
    probs = np.zeros((n_steps, space.n_types, space.n_states, na_all))
    for ti in range(space.n_types):
        v[n_steps, ti] = model.terminal_payoff(ti, m_traj.profile(n_steps))

    for k in range(n_steps - 1, -1, -1):
        m_lo, m_hi = m_traj.profile(k), m_traj.profile(k + 1)
        m_mid = 0.5 * (m_lo + m_hi)
        t_hi = grid[k + 1]
        for ti in range(space.n_types):
            def rate(t, m, vv, _ti=ti):
                cand, _ = _hamiltonian(model, _ti, t, m, vv)
                return -cand.max(axis=1)

            h = -dt
            vk = v[k + 1, ti]
            k1 = rate(t_hi, m_hi, vk)
            k2 = rate(t_hi + 0.5 * h, m_mid, vk + 0.5 * h * k1)
            k3 = rate(t_hi + 0.5 * h, m_mid, vk + 0.5 * h * k2)
            k4 = rate(t_hi + h, m_lo, vk + h * k3)
            v[k, ti] = vk + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            cand, mask = _hamiltonian(model, ti, grid[k], m_lo, v[k, ti])
            probs[k, ti, :, : mask.shape[1]] = _policy_from_candidates(cand, mask, None)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("backward HJB integration produced non-finite values")
    return ValueTable(v=v), PolicyTrajectory(probs=probs)


def forward_kfe(
    model: ScenarioModel,
    policy: PolicyTrajectory,
    m0: Optional[np.ndarray] = None,
    dt: float = 1e-3,
    explicit_drift: Optional[MfDriftSpec] = None,
) -> MeanFieldTrajectory:
    """RK4 forward integration of the profile under a piecewise-constant policy.

    The drift defaults to the generator-induced one (consistency with the
    individual jump process); an explicit drift, when supplied, is validated
    against it at probe points before use.
    """
    model.require_mode(CONTINUOUS)
    grid, n_steps = _uniform_grid(model, dt)
    if policy.n_stages != n_steps:
        raise GridMismatch(f"policy spans {policy.n_stages} intervals, want {n_steps}")
    if explicit_drift is not None:
        validate_explicit_drift(model, explicit_drift)
    space = model.space
    m = np.array(model.m0 if m0 is None else m0, dtype=float)
    values = np.empty((n_steps + 1, space.n_types, space.n_states))
    values[0] = m

    def drift_all(t, m_all, k):
        out = np.empty_like(m_all)
        for ti in range(space.n_types):
            na = space.max_actions(ti)
            u = policy.probs[k, ti, :, :na]
            if explicit_drift is not None:
                out[ti] = explicit_drift(ti, t, u, m_all)
            else:
                L = policy_averaged_kernel(model.kernel(ti, t, m_all), u)
                out[ti] = m_all[ti] @ L
        return out

    for k in range(n_steps):
        t = grid[k]
        k1 = drift_all(t, m, k)
        k2 = drift_all(t + 0.5 * dt, m + 0.5 * dt * k1, k)
        k3 = drift_all(t + 0.5 * dt, m + 0.5 * dt * k2, k)
        k4 = drift_all(t + dt, m + dt * k3, k)
        m = clamp_profile(m + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        values[k + 1] = m
    traj = MeanFieldTrajectory(grid=grid, values=values)
    traj.validate_simplex()
    return traj


def policy_value_backward(
    model: ScenarioModel, policy: PolicyTrajectory, m_traj: MeanFieldTrajectory, dt: float
) -> ValueTable:
    """Backward evaluation of a fixed policy (no maximization)."""
    model.require_mode(CONTINUOUS)
    grid, n_steps = _uniform_grid(model, dt)
    _check_traj_grid(m_traj, grid)
    space = model.space
    v = np.zeros((n_steps + 1, space.n_types, space.n_states))
    for ti in range(space.n_types):
        v[n_steps, ti] = model.terminal_payoff(ti, m_traj.profile(n_steps))
    for k in range(n_steps - 1, -1, -1):
        m_lo, m_hi = m_traj.profile(k), m_traj.profile(k + 1)
        m_mid = 0.5 * (m_lo + m_hi)
        t_hi = grid[k + 1]
        for ti in range(space.n_types):
            na = space.max_actions(ti)
            u = policy.probs[k, ti, :, :na]

            def rate(t, m, vv, _ti=ti, _u=u):
                q = model.kernel(_ti, t, m)
                r = model.running_payoff(_ti, t, m)
                flow = (_u * (r + np.einsum("xay,y->xa", q, vv))).sum(axis=1)
                return -flow

            h = -dt
            vk = v[k + 1, ti]
            k1 = rate(t_hi, m_hi, vk)
            k2 = rate(t_hi + 0.5 * h, m_mid, vk + 0.5 * h * k1)
            k3 = rate(t_hi + 0.5 * h, m_mid, vk + 0.5 * h * k2)
            k4 = rate(t_hi + h, m_lo, vk + h * k3)
            v[k, ti] = vk + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return ValueTable(v=v)


def solve_mfg_fixed_point(
    model: ScenarioModel, opts: FixedPointOptions = FixedPointOptions(), dt: float = 1e-3
) -> MfeSolution:
    """Damped backward/forward iteration; same stopping contract as the
    discrete solver. The maximizer inside the backward pass always reacts to
    the previous iterate's trajectory (one-iteration lag)."""
    model.require_mode(CONTINUOUS)
    grid, n_steps = _uniform_grid(model, dt)
    m_vals = np.repeat(model.m0[None, ...], n_steps + 1, axis=0)
    residual = np.inf
    converged = False
    iterations = 0
    for it in range(1, opts.max_iters + 1):
        iterations = it
        _, policy = backward_hjb(model, MeanFieldTrajectory(grid=grid, values=m_vals), dt)
        m_hat = forward_kfe(model, policy, dt=dt).values
        new_vals = (1.0 - opts.damping) * m_vals + opts.damping * m_hat
        residual = float(np.abs(new_vals - m_vals).sum(axis=(1, 2)).max())
        m_vals = new_vals
        if residual <= opts.tol:
            converged = True
            break

    _, policy = backward_hjb(model, MeanFieldTrajectory(grid=grid, values=m_vals), dt)
    mean_field = forward_kfe(model, policy, dt=dt)
    values, policy_check = backward_hjb(model, mean_field, dt)
    if policy_check.probs.shape == policy.probs.shape and np.array_equal(policy_check.probs, policy.probs):
        mean_field = forward_kfe(model, policy_check, dt=dt)
        policy = policy_check
    return MfeSolution(
        policy=policy,
        mean_field=mean_field,
        values=values,
        residual=residual,
        iterations=iterations,
        converged=converged,
    )


def exploitability(model: ScenarioModel, sol: MfeSolution, dt: float) -> float:
    """Best-response value gap of the solution policy against its own
    mean field; >= -1e-9 always, ~0 at an exact equilibrium.

    Returns the larger of the m0-weighted and max-norm gaps at time 0,
    maximized over types; invariant to constant payoff shifts.
    """
    v_br, _ = backward_hjb(model, sol.mean_field, dt)
    v_pol = policy_value_backward(model, sol.policy, sol.mean_field, dt)
    eps = -np.inf
    for ti in range(model.space.n_types):
        gap = v_br.v[0, ti] - v_pol.v[0, ti]
        weighted = float(model.m0[ti] @ gap)
        eps = max(eps, weighted, float(gap.max()))
    return eps


# --------------------------------------------------------------------------
# simplex-grid dynamic programming for the profile-control problem
# --------------------------------------------------------------------------

MAX_DP_STATES = 4
OFF_SIMPLEX_CLAMP = 1e-8


@dataclass(frozen=True)
class SimplexGrid:
    """Regular grid on the simplex: all compositions of k into nx parts."""

    resolution: int
    dim: int
    points: np.ndarray  # (npts, dim) floats, rows sum to 1
    counts: np.ndarray  # (npts, dim) ints, rows sum to k

    @classmethod
    def build(cls, resolution: int, dim: int) -> "SimplexGrid":
        if dim > MAX_DP_STATES:
            raise StateTooLarge(f"simplex grid limited to {MAX_DP_STATES} states, got {dim}")
        if resolution < 1:
            raise ShapeMismatch("grid resolution must be >= 1")
        counts = []

        def fill(prefix, remaining, slots):
            if slots == 1:
                counts.append(prefix + [remaining])
                return
            for c in range(remaining + 1):
                fill(prefix + [c], remaining - c, slots - 1)

        fill([], resolution, dim)
        counts = np.array(counts, dtype=int)
        assert counts.shape[0] == comb(resolution + dim - 1, dim - 1)
        return cls(resolution=resolution, dim=dim, points=counts / resolution, counts=counts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def _index_map(self):
        if not hasattr(self, "_idx"):
            object.__setattr__(self, "_idx", {tuple(c): i for i, c in enumerate(map(tuple, self.counts))})
        return self._idx

    def barycentric(self, m: np.ndarray):
        """Vertices (grid indices) and convex weights of the simplex cell
        containing m, via the standard triangulation in cumulative coordinates.

        The cumulative transform x_i = k * sum_{j >= i} m_j maps the simplex
        onto the monotone domain k >= x_1 >= ... >= x_{d-1} >= 0, whose
        boundaries are respected by the cube triangulation, so every vertex
        lifts back to a valid grid point.
        """
        k, d = self.resolution, self.dim
        y = k * np.asarray(m, dtype=float)
        x = np.cumsum(y[::-1])[::-1]  # x[0] = k, nonincreasing
        free = np.clip(x[1:], 0.0, float(k))  # d-1 coordinates
        b = np.floor(free)
        f = free - b
        over = b > free  # guard against fp; floor never exceeds
        b[over] = free[over]
        order = np.argsort(-f, kind="stable")
        verts_cum = [b.copy()]
        for j in order:
            nxt = verts_cum[-1].copy()
            nxt[j] += 1.0
            verts_cum.append(nxt)
        weights = np.empty(d)
        fs = f[order]
        weights[0] = 1.0 - (fs[0] if d > 1 else 0.0)
        for j in range(1, d - 1):
            weights[j] = fs[j - 1] - fs[j]
        if d > 1:
            weights[d - 1] = fs[d - 2]
        idx_map = self._index_map()
        indices = []
        for w, vc in zip(weights, verts_cum):
            cum = np.concatenate(([float(k)], vc, [0.0]))
            cnt = np.rint(cum[:-1] - cum[1:]).astype(int)
            if cnt.min() < 0 or cnt.sum() != k:
                if w > 1e-12:
                    raise OffSimplexStep(f"interpolation vertex {cnt} off the grid")
                indices.append(0)
                continue
            indices.append(idx_map[tuple(cnt)])
        return np.array(indices, dtype=int), weights

    def interpolate(self, values: np.ndarray, m: np.ndarray) -> float:
        idx, w = self.barycentric(m)
        return float(values[idx] @ w)


@dataclass(frozen=True)
class PlannerProblem:
    """Finite-control profile steering: maximize terminal(m_T) +
    integral of running(t, u, m) subject to dm/dt = drift(t, u, m)."""

    controls: tuple
    running: Callable  # (t, u, m) -> float
    drift: Callable  # (t, u, m) -> (nx,)
    terminal: Callable  # (m,) -> float
    T: float


def planner_from_scenario(model: ScenarioModel, ti: int = 0) -> PlannerProblem:
    """Profile-steering reduction of a continuous scenario: the planner picks
    one action index for the whole population; the running payoff is the
    profile-averaged individual payoff and the drift is the generator's."""
    model.require_mode(CONTINUOUS)
    space = model.space
    na = space.max_actions(ti)
    labels = space.actions[ti][0]
    if any(space.actions[ti][xi] != labels for xi in range(space.n_states)):
        raise ShapeMismatch("planner reduction needs a shared action set across states")

    def wrap(m):
        prof = np.zeros((space.n_types, space.n_states))
        prof[ti] = m
        return prof

    def running(t, a, m):
        r = model.running_payoff(ti, t, wrap(m))
        return float(m @ r[:, a])

    def drift(t, a, m):
        q = model.kernel(ti, t, wrap(m))
        return m @ q[:, a, :]

    def terminal(m):
        return float(m @ model.terminal_payoff(ti, wrap(m)))

    return PlannerProblem(
        controls=tuple(range(na)), running=running, drift=drift, terminal=terminal, T=model.horizon.T
    )


@dataclass(frozen=True)
class SimplexDpSolution:
    grid: SimplexGrid
    times: np.ndarray
    values: np.ndarray  # (nt, npts)
    control_idx: np.ndarray  # (nt-1, npts)

    def value_at(self, t_index: int, m: np.ndarray) -> float:
        return self.grid.interpolate(self.values[t_index], m)


def solve_mf_control_simplex_dp(problem: PlannerProblem, grid: SimplexGrid, dt: float) -> SimplexDpSolution:
    """Backward DP over the simplex grid with barycentric interpolation.

    Each step evaluates, per grid point and control, one explicit Euler step
    of the profile and a linear interpolation of the next value slice. Euler
    steps may exit the simplex by at most OFF_SIMPLEX_CLAMP (clamped and
    renormalized); beyond that is an error.
    """
    n_steps = int(round(problem.T / dt))
    if abs(n_steps * dt - problem.T) > 1e-9 * max(1.0, problem.T) or n_steps < 1:
        raise GridMismatch(f"T={problem.T} not an integer multiple of dt={dt}")
    times = np.arange(n_steps + 1) * dt
    npts = grid.n_points
    values = np.empty((n_steps + 1, npts))
    control_idx = np.zeros((n_steps, npts), dtype=int)
    for p in range(npts):
        values[n_steps, p] = float(problem.terminal(grid.points[p]))
    for k in range(n_steps - 1, -1, -1):
        t = times[k]
        nxt = values[k + 1]
        for p in range(npts):
            m = grid.points[p]
            best = -np.inf
            best_u = 0
            for ui, u in enumerate(problem.controls):
                f = np.asarray(problem.drift(t, u, m), dtype=float)
                target = m + dt * f
                if target.min() < -OFF_SIMPLEX_CLAMP or abs(target.sum() - 1.0) > 1e-6:
                    raise OffSimplexStep(
                        f"Euler step from {m} under control {u!r} leaves the simplex: {target}"
                    )
                target = np.maximum(target, 0.0)
                target = target / target.sum()
                val = dt * float(problem.running(t, u, m)) + grid.interpolate(nxt, target)
                if val > best:
                    best = val
                    best_u = ui
            values[k, p] = best
            control_idx[k, p] = best_u
    return SimplexDpSolution(grid=grid, times=times, values=values, control_idx=control_idx)
