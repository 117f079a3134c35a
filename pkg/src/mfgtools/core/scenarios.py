"""Scenario file parsing, builtin parametric families, bundled scenarios.

The on-disk format is TOML; the field reference lives in
``docs/scenario_format.md``. A scenario is either a full state-space model
(``mode = "discrete"`` or ``"continuous"``) or a population game
(``mode = "population"``, payoff only, no individual kernel).
"""
from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ConfigParseError, ShapeMismatch
from .ops import probe_scenario
from .types import (
    CONTINUOUS,
    DISCRETE,
    Horizon,
    PayoffSpec,
    ScenarioModel,
    StateSpace,
    TransitionKernelSpec,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigParseError(f"missing required key {key!r}", field=section)
    return table[key]


# --------------------------------------------------------------------------
# kernel families
# --------------------------------------------------------------------------

def _kernel_table(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    values = _require(params, "values", "kernel")
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 3:
        tables = [arr] * space.n_types
    elif arr.ndim == 4 and arr.shape[0] == space.n_types:
        tables = [arr[ti] for ti in range(space.n_types)]
    else:
        raise ConfigParseError(f"table kernel must be (x, a, x') or (type, x, a, x'), got {arr.shape}", field="kernel.values")

    def func(ti, t, m):
        return tables[ti]

    return TransitionKernelSpec(mode=mode, func=func, m_dependent=False)


def _kernel_congestion_target(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    """Discrete kernel where each action aims at a target state and succeeds
    with probability 1 - congestion * m(target); failures stay put.

    ``targets`` entries are state labels or the specials "self" / "other"
    ("other" needs exactly two states).
    """
    if mode != DISCRETE:
        raise ConfigParseError("congestion-target is a discrete-mode family", field="kernel.family")
    congestion = float(params.get("congestion", 0.5))
    targets = _require(params, "targets", "kernel")
    nx = space.n_states
    na = space.max_actions(0)
    if len(targets) != na:
        raise ConfigParseError("need one target per action", field="kernel.targets")
    target_idx = np.zeros((nx, na), dtype=int)
    for ai, tgt in enumerate(targets):
        for xi in range(nx):
            if tgt == "self":
                target_idx[xi, ai] = xi
            elif tgt == "other":
                if nx != 2:
                    raise ConfigParseError('"other" target needs exactly 2 states', field="kernel.targets")
                target_idx[xi, ai] = 1 - xi
            else:
                target_idx[xi, ai] = space.state_index(tgt)

    def func(ti, t, m, _tgt=target_idx):
        q = np.zeros((nx, na, nx))
        for xi in range(nx):
            for ai in range(na):
                yi = _tgt[xi, ai]
                if yi == xi:
                    q[xi, ai, xi] = 1.0
                else:
                    p = 1.0 - congestion * float(m[ti, yi])
                    p = min(max(p, 0.0), 1.0)
                    q[xi, ai, yi] = p
                    q[xi, ai, xi] = 1.0 - p
        return q

    return TransitionKernelSpec(mode=DISCRETE, func=func, m_dependent=True)


def _kernel_smooth_switch(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    """Two-state single-action kernel with switch probabilities affine in m(state 1).

    ``q[0 -> 1] = base[0] + gain[0] * m(1)``, ``q[1 -> 0] = base[1] + gain[1] * m(1)``,
    both clipped to [0, 1]; smooth in the profile.
    """
    if mode != DISCRETE or space.n_states != 2:
        raise ConfigParseError("smooth-switch needs a 2-state discrete scenario", field="kernel.family")
    base = np.asarray(_require(params, "base", "kernel"), dtype=float)
    gain = np.asarray(_require(params, "gain", "kernel"), dtype=float)
    na = space.max_actions(0)

    def func(ti, t, m):
        m1 = float(m[ti, 1])
        p01 = min(max(base[0] + gain[0] * m1, 0.0), 1.0)
        p10 = min(max(base[1] + gain[1] * m1, 0.0), 1.0)
        row = np.array([[1.0 - p01, p01], [p10, 1.0 - p10]])
        return np.repeat(row[:, None, :], na, axis=1)

    return TransitionKernelSpec(mode=DISCRETE, func=func, m_dependent=True)


def _kernel_rate_matrix(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    if mode != CONTINUOUS:
        raise ConfigParseError("rate-matrix is a continuous-mode family", field="kernel.family")
    return _kernel_table(params, space, CONTINUOUS)


def _kernel_move_rate(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    """Two-state continuous kernel: action "move" jumps to the other state at
    a constant rate, every other action holds still."""
    if mode != CONTINUOUS or space.n_states != 2:
        raise ConfigParseError("move-rate needs a 2-state continuous scenario", field="kernel.family")
    rho = float(params.get("rho", 1.0))
    move_label = params.get("move_action", "move")
    nx, na = 2, space.max_actions(0)
    table = np.zeros((nx, na, nx))
    for xi in range(nx):
        for ai, label in enumerate(space.actions[0][xi]):
            if label == move_label:
                table[xi, ai, 1 - xi] = rho
                table[xi, ai, xi] = -rho

    def func(ti, t, m):
        return table

    return TransitionKernelSpec(mode=CONTINUOUS, func=func, m_dependent=False)


def _kernel_csma(params: dict, space: StateSpace, mode: str) -> TransitionKernelSpec:
    from ..nplayer import CsmaParams, csma_mean_field_kernel

    cp = CsmaParams(
        gamma=float(params.get("gamma", 1.0)),
        beta2=float(params.get("beta2", 0.0)),
        beta3=float(params.get("beta3", 0.0)),
        K=int(_require(params, "K", "kernel")),
        attempt=tuple(float(v) for v in _require(params, "attempt", "kernel")),
    )
    n = int(_require(params, "n", "kernel"))
    return csma_mean_field_kernel(cp, n)


KERNEL_FAMILIES = {
    "table": _kernel_table,
    "congestion-target": _kernel_congestion_target,
    "smooth-switch": _kernel_smooth_switch,
    "rate-matrix": _kernel_rate_matrix,
    "move-rate": _kernel_move_rate,
    "csma": _kernel_csma,
}


# --------------------------------------------------------------------------
# payoff families
# --------------------------------------------------------------------------

def _terminal_from(params: dict, space: StateSpace):
    spec = params.get("terminal")
    if spec is None or spec.get("family", "zero") == "zero":
        return None
    if spec["family"] == "table":
        vals = np.asarray(_require(spec, "values", "payoff.terminal"), dtype=float)
        if vals.shape != (space.n_states,):
            raise ConfigParseError("terminal table must have one value per state", field="payoff.terminal")
        return lambda ti, m: vals
    raise ConfigParseError(f"unknown terminal family {spec['family']!r}", field="payoff.terminal")


def _payoff_table(params: dict, space: StateSpace) -> PayoffSpec:
    vals = np.asarray(_require(params, "values", "payoff"), dtype=float)
    na = space.max_actions(0)
    if vals.shape != (space.n_states, na):
        raise ConfigParseError(f"payoff table must be (states, actions) = ({space.n_states}, {na})", field="payoff.values")
    return PayoffSpec(running=lambda ti, t, m: vals, terminal=_terminal_from(params, space))


def _payoff_crowd_linear(params: dict, space: StateSpace) -> PayoffSpec:
    """Reward of a state decreases linearly in its own mass:
    ``r(x, a, m) = base[x] - kappa * m(x) - action_cost[x, a]``."""
    base = np.asarray(_require(params, "base", "payoff"), dtype=float)
    kappa = float(params.get("kappa", 0.0))
    nx, na = space.n_states, space.max_actions(0)
    if base.shape != (nx,):
        raise ConfigParseError("base must have one value per state", field="payoff.base")
    cost = np.asarray(params.get("action_cost", np.zeros((nx, na))), dtype=float)
    if cost.shape != (nx, na):
        raise ConfigParseError(f"action_cost must be ({nx}, {na})", field="payoff.action_cost")

    def running(ti, t, m):
        return (base - kappa * m[ti])[:, None] - cost

    def population(ti, m):
        return base - kappa * m[ti]

    affine = (-kappa * np.eye(nx), base.copy())
    return PayoffSpec(
        running=running, population=population, terminal=_terminal_from(params, space),
        population_affine=affine,
    )


def _payoff_matrix(params: dict, space: StateSpace) -> PayoffSpec:
    """Population-game payoff r(m) = A m (+ offset)."""
    A = np.asarray(_require(params, "matrix", "payoff"), dtype=float)
    nx = space.n_states
    if A.shape != (nx, nx):
        raise ConfigParseError(f"matrix must be ({nx}, {nx})", field="payoff.matrix")
    offset = np.asarray(params.get("offset", np.zeros(nx)), dtype=float)

    def population(ti, m):
        return A @ m[ti] + offset

    return PayoffSpec(
        population=population, terminal=_terminal_from(params, space),
        population_affine=(A.copy(), offset.copy()),
    )


def _payoff_zero(params: dict, space: StateSpace) -> PayoffSpec:
    nx, na = space.n_states, space.max_actions(0)
    zeros = np.zeros((nx, na))
    return PayoffSpec(running=lambda ti, t, m: zeros, terminal=_terminal_from(params, space))


PAYOFF_FAMILIES = {
    "table": _payoff_table,
    "crowd-linear": _payoff_crowd_linear,
    "matrix": _payoff_matrix,
    "zero": _payoff_zero,
}


# --------------------------------------------------------------------------
# scenario assembly
# --------------------------------------------------------------------------

def parse_scenario(data: dict, name: str = "scenario") -> ScenarioModel:
    """Build an (unprobed) ScenarioModel from parsed TOML data."""
    name = data.get("name", name)
    mode = _require(data, "mode", "scenario")
    if mode not in (DISCRETE, CONTINUOUS, "population"):
        raise ConfigParseError(f"mode must be discrete/continuous/population, got {mode!r}", field="mode")

    space_tbl = _require(data, "space", "scenario")
    states = _require(space_tbl, "states", "space")
    types = space_tbl.get("types", ["default"])
    actions = space_tbl.get("actions")
    if isinstance(actions, dict):
        actions = {k: tuple(v) for k, v in actions.items()}
    try:
        space = StateSpace.build(states, actions, types)
    except ShapeMismatch as exc:
        raise ConfigParseError(str(exc), field="space") from exc

    hz_tbl = _require(data, "horizon", "scenario")
    if mode == DISCRETE:
        horizon = Horizon(stages=int(_require(hz_tbl, "stages", "horizon")))
    else:
        horizon = Horizon(T=float(_require(hz_tbl, "T", "horizon")), dt=hz_tbl.get("dt"))

    init_tbl = _require(data, "initial", "scenario")
    m0 = np.asarray(_require(init_tbl, "m0", "initial"), dtype=float)
    if m0.ndim == 1:
        m0 = np.repeat(m0[None, :], space.n_types, axis=0)
    if m0.shape != (space.n_types, space.n_states):
        raise ConfigParseError(f"m0 shape {m0.shape} inconsistent with space", field="initial.m0")

    kernel = None
    if mode != "population":
        k_tbl = _require(data, "kernel", "scenario")
        family = _require(k_tbl, "family", "kernel")
        if family not in KERNEL_FAMILIES:
            raise ConfigParseError(f"unknown kernel family {family!r}", field="kernel.family")
        kernel = KERNEL_FAMILIES[family](k_tbl, space, mode)

    p_tbl = _require(data, "payoff", "scenario")
    p_family = _require(p_tbl, "family", "payoff")
    if p_family not in PAYOFF_FAMILIES:
        raise ConfigParseError(f"unknown payoff family {p_family!r}", field="payoff.family")
    payoff = PAYOFF_FAMILIES[p_family](p_tbl, space)

    try:
        return ScenarioModel(space=space, kernel=kernel, payoff=payoff, horizon=horizon, m0=m0, name=name)
    except ShapeMismatch as exc:
        raise ConfigParseError(str(exc), field="scenario") from exc


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigParseError(f"scenario file not found: {path}", field=str(path))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"TOML syntax error: {exc}", field=str(path))


def validate_scenario(raw) -> ScenarioModel:
    """Parse (if needed) and probe a scenario; the returned model's kernel
    invariants hold at m0 and at the fixed random probe points."""
    if isinstance(raw, ScenarioModel):
        return probe_scenario(raw)
    if isinstance(raw, dict):
        return probe_scenario(parse_scenario(raw))
    data = load_toml(raw)
    return probe_scenario(parse_scenario(data, name=Path(str(raw)).stem))


# --------------------------------------------------------------------------
# bundled scenarios
# --------------------------------------------------------------------------

def bundled_names() -> list:
    pkg = resources.files("mfgtools") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".toml"))


def bundled_path(name: str) -> Path:
    if name.endswith(".toml"):
        name = name[:-5]
    pkg = resources.files("mfgtools") / "scenarios" / f"{name}.toml"
    with resources.as_file(pkg) as p:
        if not p.exists():
            raise ConfigParseError(f"no bundled scenario named {name!r} (have: {', '.join(bundled_names())})")
        return Path(p)


def bundled(name: str) -> ScenarioModel:
    return validate_scenario(bundled_path(name))


def resolve_scenario(ref) -> ScenarioModel:
    """Accept a filesystem path or a bundled scenario name."""
    p = Path(str(ref))
    if p.exists():
        return validate_scenario(p)
    return bundled(str(ref))
