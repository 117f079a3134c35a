"""Core operations: payoff reduction, policy-averaged kernels, kernel probing,
and the static population-game equilibrium check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import (
    GeneratorRowSum,
    KernelNotStochastic,
    ShapeMismatch,
)
from .types import (
    DISCRETE,
    ScenarioModel,
    SimplexVector,
    StateSpace,
)

# Kernel invariants are checked by random probing at validation time; the
# probe seed is fixed so validation is deterministic.
PROBE_SEED = 987134
N_PROBES = 10
ROW_TOL = 1e-9


def reduce_pairwise_payoff(pairwise: np.ndarray, m) -> np.ndarray:
    """Average a pairwise payoff table over the opponent-state distribution.

    ``pairwise[x, a, w]`` is the payoff against an opponent in state ``w``;
    the reduced payoff is ``r[x, a] = sum_w pairwise[x, a, w] * m[w]`` and is
    exactly linear in ``m``.
    """
    table = np.asarray(pairwise, dtype=float)
    mv = m.values if isinstance(m, SimplexVector) else np.asarray(m, dtype=float)
    if table.ndim != 3:
        raise ShapeMismatch(f"pairwise table must be (x, a, w), got shape {table.shape}")
    if mv.ndim != 1 or table.shape[2] != mv.size:
        raise ShapeMismatch(f"opponent axis {table.shape[2]} != profile length {mv.size}")
    return table @ mv


def policy_averaged_kernel(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Mix the individual kernel by the per-state action distribution.

    ``L[x, x'] = sum_a u[x, a] * q[x, a, x']``. Row-sum invariants of q's
    mode carry over since each row of L is a convex combination of q rows.
    """
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    if q.ndim != 3 or u.ndim != 2 or q.shape[:2] != u.shape or q.shape[0] != q.shape[2]:
        raise ShapeMismatch(f"kernel {q.shape} / policy {u.shape} shapes incompatible")
    return np.einsum("xa,xay->xy", u, q)


def scenario_population_kernel(
    model: ScenarioModel, u: np.ndarray, m: np.ndarray, t: float, ti: int = 0
) -> np.ndarray:
    """Population kernel of a scenario under policy ``u`` at profile ``m``."""
    q = model.kernel(ti, t, m)
    return policy_averaged_kernel(q, u)


@dataclass(frozen=True)
class EquilibriumReport:
    is_equilibrium: bool
    max_gap: float
    violating_states: tuple


def check_population_equilibrium(m, payoff: Callable, tol: float = 1e-9) -> EquilibriumReport:
    """Support-inclusion test for a static population game.

    ``m`` is an equilibrium candidate iff every state carrying more than
    ``tol`` mass earns within ``tol`` of the best payoff. The report's
    ``max_gap`` is the worst best-minus-own gap over supported states, so it
    is invariant under adding a constant to all payoffs.
    """
    mv = m.values if isinstance(m, SimplexVector) else np.asarray(m, dtype=float)
    r = np.asarray(payoff(mv), dtype=float)
    if r.shape != mv.shape:
        raise ShapeMismatch(f"payoff shape {r.shape} != profile shape {mv.shape}")
    if not np.all(np.isfinite(r)):
        raise ShapeMismatch("payoff not finite at the profile")
    best = float(r.max())
    supported = mv > tol
    gaps = np.where(supported, best - r, 0.0)
    max_gap = float(gaps.max()) if supported.any() else 0.0
    violating = tuple(int(i) for i in np.nonzero(supported & (best - r > tol))[0])
    return EquilibriumReport(is_equilibrium=len(violating) == 0, max_gap=max_gap, violating_states=violating)


def random_profiles(space: StateSpace, n: int, seed: int = PROBE_SEED) -> np.ndarray:
    """Deterministic batch of interior probe profiles, shape (n, n_types, nx)."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(space.n_states), size=(n, space.n_types))


def check_kernel_rows(q: np.ndarray, mode: str, mask: np.ndarray, context: str = ""):
    """Validate stochastic-row / zero-row-sum invariants of one kernel table."""
    if q.ndim != 3 or q.shape[0] != q.shape[2] or q.shape[:2] != mask.shape:
        raise ShapeMismatch(f"kernel table shape {q.shape} inconsistent with space {context}")
    if not np.all(np.isfinite(q[mask])):
        raise ShapeMismatch(f"kernel has non-finite entries {context}")
    sums = q.sum(axis=2)
    if mode == DISCRETE:
        if np.any(q[mask] < -ROW_TOL):
            raise KernelNotStochastic(f"negative transition probability {context}")
        bad = mask & (np.abs(sums - 1.0) > ROW_TOL)
        if bad.any():
            x, a = np.argwhere(bad)[0]
            raise KernelNotStochastic(f"row (x={x}, a={a}) sums to {sums[x, a]} != 1 {context}")
    else:
        nx = q.shape[0]
        off = q * (1.0 - np.eye(nx))[:, None, :]
        if np.any(off[mask] < -ROW_TOL):
            raise GeneratorRowSum(f"negative off-diagonal rate {context}")
        bad = mask & (np.abs(sums) > ROW_TOL)
        if bad.any():
            x, a = np.argwhere(bad)[0]
            raise GeneratorRowSum(f"row (x={x}, a={a}) sums to {sums[x, a]} != 0 {context}")


def probe_scenario(model: ScenarioModel, n_probes: int = N_PROBES, seed: int = PROBE_SEED):
    """Check kernel and payoff invariants at m0 and at random simplex points.

    Full symbolic verification is impossible for black-box kernels, so the
    contract is: invariants hold at m0 plus ``n_probes`` Dirichlet draws from
    a fixed probe seed. Raises the mode-appropriate error on failure.
    """
    probes = [model.m0]
    if any(
        comp is not None and getattr(comp, "m_dependent", True)
        for comp in (model.kernel,)
    ) or model.kernel is None:
        probes.extend(random_profiles(model.space, n_probes, seed))
    t_probe = 0 if model.horizon.is_discrete else 0.0
    for m in probes:
        for ti in range(model.space.n_types):
            mask = model.space.action_mask(ti)
            if model.kernel is not None:
                q = model.kernel(ti, t_probe, m)
                check_kernel_rows(q, model.kernel.mode, mask, context=f"(type {ti}, scenario {model.name!r})")
            if model.payoff.running is not None:
                r = model.running_payoff(ti, t_probe, m)
                if r.shape != mask.shape:
                    raise ShapeMismatch(f"running payoff shape {r.shape} != {mask.shape}")
                if not np.all(np.isfinite(r[mask])):
                    raise ShapeMismatch("running payoff not finite at a probe point")
            if model.payoff.population is not None:
                r = np.asarray(model.payoff.population(ti, m), dtype=float)
                if r.shape != (model.space.n_states,):
                    raise ShapeMismatch("population payoff must be one value per state")
                if not np.all(np.isfinite(r)):
                    raise ShapeMismatch("population payoff not finite at a probe point")
            g = model.terminal_payoff(ti, m)
            if g.shape != (model.space.n_states,):
                raise ShapeMismatch("terminal payoff must be one value per state")
    return model
