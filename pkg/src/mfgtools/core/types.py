"""Domain types shared by every solver and simulator.

Conventions used throughout the package:

* the population profile ("mean field") is an array of shape
  ``(n_types, n_states)``; single-type models simply have a leading axis of 1;
* model callables (kernels, payoffs, drifts) receive ``(type_index, t, m)``
  with ``m`` the full profile, and return dense arrays over the type's own
  states/actions;
* action sets may differ per (type, state); dense arrays are padded to the
  per-type maximum and masked.

All types are immutable after construction and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import (
    EmptyActionSet,
    ModeMismatch,
    ShapeMismatch,
)

# Negative mass within this slack is treated as floating-point drift and
# clamped to zero on read; anything larger is a hard error.
NEGATIVE_MASS_CLAMP = 1e-12

# Default absolute slack for sum-to-one checks (RK4 drift over horizon 100
# stays well inside it).
DEFAULT_SIMPLEX_TOL = 1e-9

DISCRETE = "discrete"
CONTINUOUS = "continuous"


class SimplexVector:
    """A probability distribution over a finite state set.

    Stores the raw mass vector; reads clamp negatives within
    ``NEGATIVE_MASS_CLAMP`` to zero. Construction validates nonnegativity
    (up to the clamp) and that the total mass is 1 within ``tolerance``.
    """

    __slots__ = ("_mass", "tolerance")

    def __init__(self, mass, tolerance: float = DEFAULT_SIMPLEX_TOL):
        arr = np.asarray(mass, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeMismatch(f"simplex vector must be 1-D and nonempty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeMismatch("simplex vector has non-finite entries")
        if np.any(arr < -NEGATIVE_MASS_CLAMP):
            worst = float(arr.min())
            raise ShapeMismatch(f"negative mass {worst} below clamp {-NEGATIVE_MASS_CLAMP}")
        total = float(arr.sum())
        if abs(total - 1.0) > tolerance:
            raise ShapeMismatch(f"mass sums to {total}, outside 1 +/- {tolerance}")
        self._mass = arr.copy()
        self._mass.setflags(write=False)
        self.tolerance = float(tolerance)

    @property
    def values(self) -> np.ndarray:
        """Mass vector with tiny negatives clamped to zero."""
        out = np.maximum(self._mass, 0.0)
        out.setflags(write=False)
        return out

    def raw(self) -> np.ndarray:
        return self._mass

    def __len__(self) -> int:
        return self._mass.size

    def __getitem__(self, i) -> float:
        return float(max(self._mass[i], 0.0))

    def __repr__(self) -> str:
        return f"SimplexVector({np.array2string(self._mass, precision=6)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SimplexVector) and np.array_equal(self._mass, other._mass)

    def __hash__(self):
        return hash(self._mass.tobytes())


def clamp_profile(m: np.ndarray) -> np.ndarray:
    """Zero out tiny negative masses (within the documented clamp) in place-free form."""
    return np.where((m < 0.0) & (m >= -NEGATIVE_MASS_CLAMP), 0.0, m)


@dataclass(frozen=True)
class StateSpace:
    """Finite state set, type set, and per-(type, state) action sets."""

    states: tuple
    types: tuple = ("default",)
    # actions[ti][xi] is the ordered action-label tuple for (type ti, state xi)
    actions: tuple = ()

    def __post_init__(self):
        if len(self.states) < 1:
            raise ShapeMismatch("state space must have at least one state")
        if len(set(self.states)) != len(self.states):
            raise ShapeMismatch("state labels must be unique")
        if len(set(self.types)) != len(self.types):
            raise ShapeMismatch("type labels must be unique")
        if len(self.actions) != len(self.types):
            raise ShapeMismatch("need one action table per type")
        for ti, per_state in enumerate(self.actions):
            if len(per_state) != len(self.states):
                raise ShapeMismatch(f"type {self.types[ti]}: need one action set per state")
            for xi, acts in enumerate(per_state):
                if len(acts) == 0:
                    raise EmptyActionSet(f"(type={self.types[ti]}, state={self.states[xi]}) has no actions")
                if len(set(acts)) != len(acts):
                    raise ShapeMismatch("action labels must be unique within a state")

    @classmethod
    def build(cls, states: Sequence, actions=None, types: Sequence = ("default",)) -> "StateSpace":
        """Normalize flexible action specs.

        ``actions`` may be: None (single action "act" everywhere), a sequence
        of labels (same set for every type/state), a mapping state->labels,
        or a mapping (type, state)->labels.
        """
        states = tuple(states)
        types = tuple(types)
        if actions is None:
            table = tuple(tuple(("act",) for _ in states) for _ in types)
        elif isinstance(actions, dict):
            sample_key = next(iter(actions))
            table = []
            for ty in types:
                row = []
                for s in states:
                    key = (ty, s) if isinstance(sample_key, tuple) else s
                    if key not in actions:
                        raise ShapeMismatch(f"no action set for {key!r}")
                    row.append(tuple(actions[key]))
                table.append(tuple(row))
            table = tuple(table)
        else:
            labels = tuple(actions)
            table = tuple(tuple(labels for _ in states) for _ in types)
        return cls(states=states, types=types, actions=table)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_types(self) -> int:
        return len(self.types)

    def n_actions(self, ti: int, xi: int) -> int:
        return len(self.actions[ti][xi])

    def max_actions(self, ti: int) -> int:
        return max(len(a) for a in self.actions[ti])

    def action_mask(self, ti: int) -> np.ndarray:
        """Boolean (n_states, max_actions) mask of valid actions."""
        na = self.max_actions(ti)
        mask = np.zeros((self.n_states, na), dtype=bool)
        for xi in range(self.n_states):
            mask[xi, : self.n_actions(ti, xi)] = True
        return mask

    def state_index(self, label) -> int:
        return self.states.index(label)


@dataclass(frozen=True)
class Horizon:
    """Either a discrete stage count or a continuous span with step."""

    stages: Optional[int] = None
    T: Optional[float] = None
    dt: Optional[float] = None

    def __post_init__(self):
        if self.stages is not None:
            if self.stages <= 0:
                raise ShapeMismatch("stage count must be positive")
        elif self.T is not None:
            if self.T <= 0:
                raise ShapeMismatch("horizon must be positive")
            if self.dt is not None and not 0 < self.dt <= self.T:
                raise ShapeMismatch("step must lie in (0, T]")
        else:
            raise ShapeMismatch("horizon needs either stages or T")

    @property
    def is_discrete(self) -> bool:
        return self.stages is not None


@dataclass(frozen=True)
class TransitionKernelSpec:
    """Individual transition law q[x, a, x'](t, m) per type.

    ``func(ti, t, m)`` returns a dense ``(n_states, max_actions, n_states)``
    array. In discrete mode each valid (x, a) row is a probability vector; in
    continuous mode each row sums to zero with nonnegative off-diagonals.
    ``m_dependent=False`` marks kernels that ignore the profile, which lets
    simulators cache evaluations.
    """

    mode: str
    func: Callable[[int, float, np.ndarray], np.ndarray]
    m_dependent: bool = True

    def __post_init__(self):
        if self.mode not in (DISCRETE, CONTINUOUS):
            raise ModeMismatch(f"unknown kernel mode {self.mode!r}")

    def __call__(self, ti: int, t: float, m: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(ti, t, m), dtype=float)

    @classmethod
    def from_table(cls, table, mode: str = DISCRETE) -> "TransitionKernelSpec":
        """m- and t-independent kernel from a dense (nx, na, nx) array
        (or a per-type list of such arrays)."""
        arrs = [np.asarray(a, dtype=float) for a in table] if isinstance(table, (list, tuple)) and np.asarray(table[0]).ndim == 3 else [np.asarray(table, dtype=float)]
        frozen = [a.copy() for a in arrs]

        def func(ti, t, m, _frozen=frozen):
            return _frozen[ti if len(_frozen) > 1 else 0]

        return cls(mode=mode, func=func, m_dependent=False)


@dataclass(frozen=True)
class PayoffSpec:
    """Running/terminal payoffs, optionally sourced from a pairwise table.

    ``running(ti, t, m) -> (nx, na)``; ``terminal(ti, m) -> (nx,)``.
    ``population(ti, m) -> (nx,)`` is the per-state payoff of a population
    game (used by the evolutionary dynamics and equilibrium checks); it may
    be absent for pure optimal-control scenarios, and running may be absent
    for pure population games.
    """

    running: Optional[Callable[[int, float, np.ndarray], np.ndarray]] = None
    terminal: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    population: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    # pairwise(ti, t) -> (nx, na, nw): running is then its m-average
    pairwise: Optional[Callable[[int, float], np.ndarray]] = None
    # set when population is affine, r(m) = A @ m + c; enables compiled
    # integrator paths without changing any semantics
    population_affine: Optional[tuple] = None

    def __post_init__(self):
        if self.running is None and self.population is None and self.pairwise is None:
            raise ShapeMismatch("payoff spec needs a running, population, or pairwise component")


@dataclass(frozen=True)
class ScenarioModel:
    """Validated bundle: spaces, kernel, payoff, horizon, initial profile."""

    space: StateSpace
    kernel: Optional[TransitionKernelSpec]
    payoff: PayoffSpec
    horizon: Horizon
    m0: np.ndarray  # (n_types, n_states)
    name: str = "scenario"

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float)
        if m0.shape != (self.space.n_types, self.space.n_states):
            raise ShapeMismatch(
                f"m0 shape {m0.shape} != (n_types={self.space.n_types}, n_states={self.space.n_states})"
            )
        for ti in range(self.space.n_types):
            SimplexVector(m0[ti])  # validates
        object.__setattr__(self, "m0", m0)

    @property
    def mode(self) -> Optional[str]:
        return None if self.kernel is None else self.kernel.mode

    def require_mode(self, mode: str):
        if self.kernel is None:
            raise ModeMismatch(f"scenario {self.name!r} has no transition kernel")
        if self.kernel.mode != mode:
            raise ModeMismatch(f"scenario {self.name!r} is {self.kernel.mode}-mode, solver needs {mode}")

    def running_payoff(self, ti: int, t: float, m: np.ndarray) -> np.ndarray:
        if self.payoff.running is not None:
            return np.asarray(self.payoff.running(ti, t, m), dtype=float)
        if self.payoff.pairwise is not None:
            from .ops import reduce_pairwise_payoff

            return reduce_pairwise_payoff(self.payoff.pairwise(ti, t), m[ti])
        raise ModeMismatch(f"scenario {self.name!r} has no running payoff")

    def terminal_payoff(self, ti: int, m: np.ndarray) -> np.ndarray:
        if self.payoff.terminal is None:
            return np.zeros(self.space.n_states)
        return np.asarray(self.payoff.terminal(ti, m), dtype=float)


@dataclass(frozen=True)
class PolicyTrajectory:
    """Time-indexed state-conditioned mixed actions: probs[t, ti, x, a]."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 4:
            raise ShapeMismatch(f"policy array must be 4-D (t, type, state, action), got {arr.shape}")
        if np.any(arr < -1e-12):
            raise ShapeMismatch("negative action probability")
        object.__setattr__(self, "probs", arr)

    @classmethod
    def stationary(cls, per_state: np.ndarray, n_stages: int) -> "PolicyTrajectory":
        """Repeat a (ti, x, a) table across n_stages."""
        base = np.asarray(per_state, dtype=float)
        if base.ndim == 2:
            base = base[None, :, :]
        return cls(np.repeat(base[None, ...], n_stages, axis=0))

    @classmethod
    def pure(cls, space: StateSpace, action_index, n_stages: int) -> "PolicyTrajectory":
        """Everyone plays a fixed action index (per type/state broadcastable)."""
        na = max(space.max_actions(ti) for ti in range(space.n_types))
        probs = np.zeros((n_stages, space.n_types, space.n_states, na))
        idx = np.broadcast_to(np.asarray(action_index), (space.n_types, space.n_states))
        for ti in range(space.n_types):
            for xi in range(space.n_states):
                probs[:, ti, xi, idx[ti, xi]] = 1.0
        return cls(probs)

    @property
    def n_stages(self) -> int:
        return self.probs.shape[0]

    def at(self, t: int, ti: int) -> np.ndarray:
        return self.probs[t, ti]

    def validate_rows(self, space: StateSpace, tol: float = 1e-12):
        for ti in range(space.n_types):
            mask = space.action_mask(ti)
            na = mask.shape[1]
            sub = self.probs[:, ti, :, :na]
            sums = (sub * mask[None, :, :]).sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > tol):
                raise ShapeMismatch("policy rows must sum to 1 on valid actions")
            if np.any(np.abs(sub * ~mask[None, :, :]) > tol):
                raise ShapeMismatch("policy puts mass on invalid actions")


@dataclass(frozen=True)
class MeanFieldTrajectory:
    """Time grid plus one profile per grid point: values[k, ti, x]."""

    grid: np.ndarray
    values: np.ndarray
    tolerance: float = DEFAULT_SIMPLEX_TOL

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or vals.ndim != 3 or vals.shape[0] != grid.size:
            raise ShapeMismatch(f"trajectory shapes inconsistent: grid {grid.shape}, values {vals.shape}")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ShapeMismatch("time grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    @property
    def n_points(self) -> int:
        return self.grid.size

    def profile(self, k: int) -> np.ndarray:
        return self.values[k]

    def simplex(self, k: int, ti: int = 0) -> SimplexVector:
        return SimplexVector(clamp_profile(self.values[k, ti]), tolerance=self.tolerance)

    def validate_simplex(self):
        for k in range(self.n_points):
            for ti in range(self.values.shape[1]):
                self.simplex(k, ti)

    def sup_l1_distance(self, other: "MeanFieldTrajectory") -> float:
        if self.values.shape != other.values.shape or not np.allclose(self.grid, other.grid):
            raise ShapeMismatch("trajectories live on different grids")
        return float(np.abs(self.values - other.values).sum(axis=(1, 2)).max())
