"""Discrete-time finite-horizon mean field equilibrium solver.

The backward pass is a Bellman recursion along a frozen mean field
trajectory; the forward pass pushes the initial profile through the
policy-averaged kernel; the equilibrium iteration damps the trajectory
update. A multiplicative (risk-sensitive) backward variant and exact
trajectory-enumeration oracles are included for small instances.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core.ops import policy_averaged_kernel
from .core.types import (
    DISCRETE,
    MeanFieldTrajectory,
    PolicyTrajectory,
    ScenarioModel,
    clamp_profile,
)
from .errors import (
    NonFiniteValue,
    Overflow,
    ShapeMismatch,
    TooLarge,
)


@dataclass(frozen=True)
class ValueTable:
    """Stage values v[t, type, state] along a fixed mean field trajectory."""

    v: np.ndarray

    def at(self, t: int, ti: int = 0) -> np.ndarray:
        return self.v[t, ti]


@dataclass(frozen=True)
class FixedPointOptions:
    damping: float = 0.5
    max_iters: int = 500
    tol: float = 1e-8
    # argmax ties are broken at the lowest action index; stable and documented
    tie_break: str = "lowest-action-index"
    # optional softmax smoothing for mixed equilibria: temperature eta0
    # annealed geometrically (factor every `anneal_every` iterations)
    smoothing: bool = False
    eta0: float = 1.0
    anneal_factor: float = 0.5
    anneal_every: int = 50

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ShapeMismatch("damping must lie in (0, 1]")
        if self.tol <= 0:
            raise ShapeMismatch("tolerance must be positive")
        if self.tie_break != "lowest-action-index":
            raise ShapeMismatch(f"unsupported tie break {self.tie_break!r}")


@dataclass(frozen=True)
class MfeSolution:
    policy: PolicyTrajectory
    mean_field: MeanFieldTrajectory
    values: ValueTable
    residual: float
    iterations: int
    converged: bool
    smoothed: bool = False


def _stage_candidates(model: ScenarioModel, ti: int, t: int, m: np.ndarray, v_next: np.ndarray):
    """Q-values r(x,a,m) + sum_x' q[x,a,x'] v_next[x'], invalid actions -inf."""
    q = model.kernel(ti, t, m)
    r = model.running_payoff(ti, t, m)
    mask = model.space.action_mask(ti)
    if q.shape[:2] != mask.shape or r.shape != mask.shape:
        raise ShapeMismatch(f"kernel/payoff shapes {q.shape}/{r.shape} inconsistent at t={t}")
    cand = r + np.einsum("xay,y->xa", q, v_next)
    return np.where(mask, cand, -np.inf), mask


def _policy_from_candidates(cand: np.ndarray, mask: np.ndarray, smoothing_eta: Optional[float]):
    nx, na = cand.shape
    probs = np.zeros((nx, na))
    if smoothing_eta is None:
        best = np.argmax(cand, axis=1)  # first maximizer = lowest action index
        probs[np.arange(nx), best] = 1.0
    else:
        z = (cand - cand.max(axis=1, keepdims=True)) / smoothing_eta
        w = np.where(mask, np.exp(z), 0.0)
        probs = w / w.sum(axis=1, keepdims=True)
    return probs


def backward_bellman(
    model: ScenarioModel,
    m_traj: MeanFieldTrajectory,
    smoothing_eta: Optional[float] = None,
) -> tuple:
    """Backward recursion along the given trajectory.

    Returns (ValueTable, PolicyTrajectory); the policy puts mass 1 on the
    lowest-index maximizer, or is a softmax over Q-values when smoothing is
    active.
    """
    model.require_mode(DISCRETE)
    T = model.horizon.stages
    if m_traj.n_points != T + 1:
        raise ShapeMismatch(f"trajectory has {m_traj.n_points} points, want {T + 1}")
    space = model.space
    na = max(space.max_actions(ti) for ti in range(space.n_types))
    v = np.zeros((T + 1, space.n_types, space.n_states))
    probs = np.zeros((T, space.n_types, space.n_states, na))
    for ti in range(space.n_types):
        v[T, ti] = model.terminal_payoff(ti, m_traj.profile(T))
    for t in range(T - 1, -1, -1):
        m = m_traj.profile(t)
        for ti in range(space.n_types):
            cand, mask = _stage_candidates(model, ti, t, m, v[t + 1, ti])
            v[t, ti] = cand.max(axis=1)
            probs[t, ti, :, : mask.shape[1]] = _policy_from_candidates(cand, mask, smoothing_eta)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("backward recursion produced non-finite values")
    return ValueTable(v=v), PolicyTrajectory(probs=probs)


def forward_kolmogorov(
    model: ScenarioModel, policy: PolicyTrajectory, m0: Optional[np.ndarray] = None
) -> MeanFieldTrajectory:
    """Push the profile forward through the policy-averaged kernel."""
    model.require_mode(DISCRETE)
    T = model.horizon.stages
    if policy.n_stages != T:
        raise ShapeMismatch(f"policy spans {policy.n_stages} stages, want {T}")
    space = model.space
    m = np.array(model.m0 if m0 is None else m0, dtype=float)
    values = np.empty((T + 1, space.n_types, space.n_states))
    values[0] = m
    for t in range(T):
        nxt = np.empty_like(m)
        for ti in range(space.n_types):
            na = space.max_actions(ti)
            L = policy_averaged_kernel(model.kernel(ti, t, m), policy.probs[t, ti, :, :na])
            nxt[ti] = clamp_profile(m[ti] @ L)
        m = nxt
        values[t + 1] = m
    traj = MeanFieldTrajectory(grid=np.arange(T + 1, dtype=float), values=values)
    traj.validate_simplex()
    return traj


def _policies_equal(a: PolicyTrajectory, b: PolicyTrajectory) -> bool:
    return a.probs.shape == b.probs.shape and np.array_equal(a.probs, b.probs)


def solve_bsk_fixed_point(
    model: ScenarioModel, opts: FixedPointOptions = FixedPointOptions(), mu: Optional[float] = None
) -> MfeSolution:
    """Damped best-response iteration on the mean field trajectory.

    Stops when the damped trajectory update is below tolerance in sup-L1 (or
    at max_iters, with converged=False; the best iterate is still returned).
    With ``mu`` set, the backward pass is the multiplicative (risk-sensitive)
    recursion. The reported solution is internally consistent: mean_field is
    exactly the forward image of policy, and values are computed along
    mean_field.
    """
    model.require_mode(DISCRETE)
    T = model.horizon.stages
    grid = np.arange(T + 1, dtype=float)

    def backward(m_traj, eta):
        if mu is not None:
            return risk_sensitive_backward(model, mu, m_traj)
        return backward_bellman(model, m_traj, smoothing_eta=eta)

    m_vals = np.repeat(model.m0[None, ...], T + 1, axis=0)
    residual = np.inf
    converged = False
    iterations = 0
    eta = opts.eta0 if opts.smoothing else None
    for it in range(1, opts.max_iters + 1):
        iterations = it
        if opts.smoothing:
            eta = opts.eta0 * opts.anneal_factor ** ((it - 1) // opts.anneal_every)
        _, policy = backward(MeanFieldTrajectory(grid=grid, values=m_vals), eta)
        m_hat = forward_kolmogorov(model, policy).values
        new_vals = (1.0 - opts.damping) * m_vals + opts.damping * m_hat
        residual = float(np.abs(new_vals - m_vals).sum(axis=(1, 2)).max())
        m_vals = new_vals
        if residual <= opts.tol:
            converged = True
            break

    # package a self-consistent triple: one undamped pass from the settled
    # trajectory, values recomputed along the policy's own forward image
    _, policy = backward(MeanFieldTrajectory(grid=grid, values=m_vals), eta)
    mean_field = forward_kolmogorov(model, policy)
    values, policy_check = backward(mean_field, eta)
    if _policies_equal(policy_check, policy):
        mean_field = forward_kolmogorov(model, policy_check)
        policy = policy_check
    return MfeSolution(
        policy=policy,
        mean_field=mean_field,
        values=values,
        residual=residual,
        iterations=iterations,
        converged=converged,
        smoothed=opts.smoothing,
    )


@dataclass(frozen=True)
class SupportReport:
    ok: bool
    worst_gap: float
    witnesses: tuple  # (t, type, state, action, gap) for gaps beyond tol


def verify_support_condition(model: ScenarioModel, sol: MfeSolution, tol: float = 1e-8) -> SupportReport:
    """Check that every action carrying mass is within tol of the argmax.

    For every (t, x, a) with m_t(x) * u_t(a|x) > tol, the Q-value of a must
    be within tol of the stage's best Q-value at (t, x).
    """
    model.require_mode(DISCRETE)
    T = model.horizon.stages
    worst = 0.0
    witnesses = []
    for t in range(T):
        m = sol.mean_field.profile(t)
        for ti in range(model.space.n_types):
            cand, mask = _stage_candidates(model, ti, t, m, sol.values.v[t + 1, ti])
            best = cand.max(axis=1)
            na = mask.shape[1]
            weight = m[ti][:, None] * sol.policy.probs[t, ti, :, :na]
            supported = weight > tol
            gaps = np.where(supported, best[:, None] - cand, 0.0)
            if supported.any():
                worst = max(worst, float(gaps.max()))
            for xi, ai in np.argwhere(supported & (best[:, None] - cand > tol)):
                witnesses.append((t, ti, int(xi), int(ai), float(gaps[xi, ai])))
    return SupportReport(ok=len(witnesses) == 0, worst_gap=worst, witnesses=tuple(witnesses))


# --------------------------------------------------------------------------
# risk-sensitive variant
# --------------------------------------------------------------------------

RAW_EXPONENT_LIMIT = 600.0


def risk_sensitive_backward(
    model: ScenarioModel,
    mu: float,
    m_traj: MeanFieldTrajectory,
    log_space: bool = True,
) -> tuple:
    """Multiplicative backward recursion for the exponential-utility value.

    Maximizes the certainty equivalent v = (1/mu) log E exp(mu R), which in
    multiplicative form is a max over actions when mu > 0 and a min when
    mu < 0. The default computes in log space via log-sum-exp; the raw
    (multiplicative) path is kept for cross-checks and guards its exponent.
    """
    model.require_mode(DISCRETE)
    if mu == 0:
        raise ShapeMismatch("mu must be nonzero (the mu -> 0 limit is the risk-neutral solver)")
    T = model.horizon.stages
    if m_traj.n_points != T + 1:
        raise ShapeMismatch(f"trajectory has {m_traj.n_points} points, want {T + 1}")
    space = model.space
    na_all = max(space.max_actions(ti) for ti in range(space.n_types))
    v = np.zeros((T + 1, space.n_types, space.n_states))
    probs = np.zeros((T, space.n_types, space.n_states, na_all))
    for ti in range(space.n_types):
        v[T, ti] = model.terminal_payoff(ti, m_traj.profile(T))
    for t in range(T - 1, -1, -1):
        m = m_traj.profile(t)
        for ti in range(space.n_types):
            q = model.kernel(ti, t, m)
            r = model.running_payoff(ti, t, m)
            mask = space.action_mask(ti)
            if log_space:
                # (1/mu) log sum_x' q[x,a,x'] exp(mu v_next[x'])
                ce = logsumexp(mu * v[t + 1, ti][None, None, :], b=q, axis=-1) / mu
                cand = np.where(mask, r + ce, -np.inf)
            else:
                if np.max(np.abs(mu) * (np.abs(r[mask]).max(initial=0.0) + np.abs(v[t + 1, ti]).max())) > RAW_EXPONENT_LIMIT:
                    raise Overflow("raw-space exponent beyond 600; use log_space=True")
                W_next = np.exp(mu * v[t + 1, ti])
                W_cand = np.exp(mu * r) * np.einsum("xay,y->xa", q, W_next)
                if not np.all(np.isfinite(W_cand[mask])):
                    raise Overflow("raw-space recursion overflowed; use log_space=True")
                cand = np.where(mask, np.log(np.maximum(W_cand, np.finfo(float).tiny)) / mu, -np.inf)
            v[t, ti] = cand.max(axis=1)
            probs[t, ti, :, : mask.shape[1]] = _policy_from_candidates(cand, mask, None)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("risk-sensitive recursion produced non-finite values")
    return ValueTable(v=v), PolicyTrajectory(probs=probs)


# --------------------------------------------------------------------------
# exact enumeration oracles (small instances only)
# --------------------------------------------------------------------------

ENUMERATION_LIMIT = 10**6


def _enumerate_paths(model: ScenarioModel, policy: PolicyTrajectory, m_traj: MeanFieldTrajectory, ti: int, x0: int):
    """Yield (probability, total reward) over all (state, action) paths from x0.

    Zero-probability branches are pruned, so mixed policies stay cheap.
    """
    T = model.horizon.stages
    space = model.space
    if (space.n_states ** T) * (max(space.max_actions(t) for t in range(space.n_types)) ** T) > ENUMERATION_LIMIT:
        raise TooLarge("instance too large for exhaustive path enumeration")
    q_tab = [model.kernel(ti, t, m_traj.profile(t)) for t in range(T)]
    r_tab = [model.running_payoff(ti, t, m_traj.profile(t)) for t in range(T)]
    g = model.terminal_payoff(ti, m_traj.profile(T))
    na = space.max_actions(ti)
    out = []

    def recurse(t, x, prob, reward):
        if t == T:
            out.append((prob, reward + g[x]))
            return
        for a in range(space.n_actions(ti, x)):
            pa = policy.probs[t, ti, x, a]
            if pa == 0.0:
                continue
            step_reward = r_tab[t][x, a]
            for y in range(space.n_states):
                pq = q_tab[t][x, a, y]
                if pq == 0.0:
                    continue
                recurse(t + 1, y, prob * pa * pq, reward + step_reward)

    recurse(0, x0, 1.0, 0.0)
    return out


def enumerate_risk_value_oracle(
    model: ScenarioModel, mu: float, policy: PolicyTrajectory, m_traj: MeanFieldTrajectory
) -> np.ndarray:
    """Exact certainty equivalent (1/mu) log sum_paths p exp(mu R) per
    (type, initial state), by exhaustive enumeration."""
    if mu == 0:
        raise ShapeMismatch("mu must be nonzero")
    space = model.space
    out = np.zeros((space.n_types, space.n_states))
    for ti in range(space.n_types):
        for x0 in range(space.n_states):
            paths = _enumerate_paths(model, policy, m_traj, ti, x0)
            probs = np.array([p for p, _ in paths])
            rewards = np.array([r for _, r in paths])
            out[ti, x0] = logsumexp(mu * rewards, b=probs) / mu
    return out


def enumerate_reward_moments(
    model: ScenarioModel, policy: PolicyTrajectory, m_traj: MeanFieldTrajectory
) -> tuple:
    """Exact (mean, variance) of the total reward per (type, initial state)."""
    space = model.space
    mean = np.zeros((space.n_types, space.n_states))
    var = np.zeros((space.n_types, space.n_states))
    for ti in range(space.n_types):
        for x0 in range(space.n_states):
            paths = _enumerate_paths(model, policy, m_traj, ti, x0)
            probs = np.array([p for p, _ in paths])
            rewards = np.array([r for _, r in paths])
            mean[ti, x0] = probs @ rewards
            var[ti, x0] = probs @ rewards**2 - mean[ti, x0] ** 2
    return mean, var
