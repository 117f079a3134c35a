"""Evolutionary dynamics on the simplex.

A revision protocol turns a per-state payoff function into a rate kernel
L[x, x'](m) (the rate at which players switch from x to x'); the induced
Kolmogorov forward equation

    dm(x)/dt = sum_{x' != x} m(x') L[x', x](m) - m(x) sum_{x' != x} L[x, x'](m)

conserves total mass by construction. Built-in protocols: replicator
(pairwise proportional imitation), smith (pairwise comparison), bnn
(excess-payoff target rates), smoothed-best-response (logit choice).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import _compiled
from .errors import NegativeRate, ShapeMismatch, StepUnstable, UnknownProtocol
from .core.types import MeanFieldTrajectory, ScenarioModel

PROTOCOL_NAMES = ("replicator", "smith", "bnn", "smoothed-best-response")


@dataclass(frozen=True)
class RevisionProtocol:
    """A named revision rule plus the payoff it reacts to.

    ``payoff(m) -> (nx,)`` per-state payoffs. ``affine=(A, c)`` may be set
    when ``payoff(m) == A @ m + c`` to enable the compiled integrator.
    """

    name: str
    payoff: Callable[[np.ndarray], np.ndarray]
    temperature: Optional[float] = None
    affine: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in PROTOCOL_NAMES:
            raise UnknownProtocol(f"unknown protocol {self.name!r}; have {PROTOCOL_NAMES}")
        if self.name == "smoothed-best-response":
            if self.temperature is None or self.temperature <= 0:
                raise UnknownProtocol("smoothed-best-response needs temperature > 0")

    @classmethod
    def from_scenario(cls, model: ScenarioModel, name: str, temperature: float = None, ti: int = 0):
        if model.payoff.population is None:
            raise ShapeMismatch(f"scenario {model.name!r} has no population payoff")
        nx = model.space.n_states

        def payoff(m, _ti=ti):
            prof = np.zeros((model.space.n_types, nx))
            prof[_ti] = m
            return np.asarray(model.payoff.population(_ti, prof), dtype=float)

        return cls(name=name, payoff=payoff, temperature=temperature,
                   affine=model.payoff.population_affine)


class RateKernel:
    """Population rate kernel L(m) with zero diagonal, induced by a protocol."""

    def __init__(self, protocol: RevisionProtocol):
        self.protocol = protocol

    def rates(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        r = np.asarray(self.protocol.payoff(m), dtype=float)
        nx = m.size
        name = self.protocol.name
        if name == "replicator":
            L = m[None, :] * np.maximum(r[None, :] - r[:, None], 0.0)
        elif name == "smith":
            L = np.maximum(r[None, :] - r[:, None], 0.0)
        elif name == "bnn":
            excess = np.maximum(r - float(m @ r), 0.0)
            L = np.repeat(excess[None, :], nx, axis=0)
        else:  # smoothed-best-response
            z = r / self.protocol.temperature
            z = z - z.max()
            p = np.exp(z)
            p /= p.sum()
            L = np.repeat(p[None, :], nx, axis=0)
        np.fill_diagonal(L, 0.0)
        return L

    def drift(self, m: np.ndarray) -> np.ndarray:
        return mean_field_drift(self.rates(m), m)


def protocol_to_kernel(protocol: RevisionProtocol) -> RateKernel:
    return RateKernel(protocol)


def mean_field_drift(L: np.ndarray, m) -> np.ndarray:
    """Forward-equation drift of a rate kernel at profile m.

    Inflow to x uses L[x', x] (rates INTO x), outflow uses L[x, x']; the
    components sum to zero up to roundoff. Off-diagonal rates must be >= 0.
    """
    L = np.asarray(L, dtype=float)
    mv = np.asarray(getattr(m, "values", m), dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] != mv.size:
        raise ShapeMismatch(f"rate matrix {L.shape} incompatible with profile {mv.shape}")
    off = L - np.diag(np.diag(L))
    if np.any(off < -1e-12):
        raise NegativeRate(f"negative off-diagonal switch rate {off.min()}")
    inflow = off.T @ mv
    outflow = mv * off.sum(axis=1)
    return inflow - outflow


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"  # "rk4" | "explicit-euler"
    step: float = 1e-3
    horizon: float = 1.0
    renormalize: bool = False

    def __post_init__(self):
        if self.method not in ("rk4", "explicit-euler"):
            raise ShapeMismatch(f"unknown integrator {self.method!r}")
        if not 0 < self.step <= self.horizon:
            raise ShapeMismatch("need 0 < step <= horizon")


def _drift_fn(kernel) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(kernel, RateKernel):
        return kernel.drift
    if callable(kernel):
        return lambda m: mean_field_drift(kernel(m), m)
    raise ShapeMismatch("kernel must be a RateKernel or a callable m -> rate matrix")


def integrate_forward(kernel, m0, cfg: IntegratorConfig) -> MeanFieldTrajectory:
    """Integrate the forward equation on a uniform grid.

    Deterministic; raises StepUnstable if any |m(x)| exceeds 2. With
    ``renormalize`` each step clamps negatives and rescales onto the simplex.
    """
    mv = np.asarray(getattr(m0, "values", m0), dtype=float).copy()
    n_steps = int(round(cfg.horizon / cfg.step))
    grid = np.arange(n_steps + 1) * cfg.step
    out = np.empty((n_steps + 1, mv.size))

    proto = getattr(kernel, "protocol", None)
    if proto is not None and proto.affine is not None:
        A, c = proto.affine
        status = _compiled.integrate_affine(
            _compiled.PROTOCOL_IDS[proto.name],
            np.ascontiguousarray(A, dtype=float),
            np.ascontiguousarray(c, dtype=float),
            float(proto.temperature or 1.0),
            mv, cfg.step, n_steps, cfg.method == "rk4", cfg.renormalize, out,
        )
        if status != 0:
            raise StepUnstable("integration left |m| <= 2; reduce the step")
        return MeanFieldTrajectory(grid=grid, values=out[:, None, :], tolerance=1e-6)

    drift = _drift_fn(kernel)
    m = mv
    out[0] = m
    dt = cfg.step
    for k in range(n_steps):
        if cfg.method == "rk4":
            k1 = drift(m)
            k2 = drift(m + 0.5 * dt * k1)
            k3 = drift(m + 0.5 * dt * k2)
            k4 = drift(m + dt * k3)
            m = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            m = m + dt * drift(m)
        if cfg.renormalize:
            m = np.maximum(m, 0.0)
            m = m / m.sum()
        if np.any(np.abs(m) > 2.0):
            raise StepUnstable(f"|m| exceeded 2 at step {k + 1}")
        out[k + 1] = m
    return MeanFieldTrajectory(grid=grid, values=out[:, None, :], tolerance=1e-6)


@dataclass
class RestPointSearch:
    points: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (seed index, residual)


def find_rest_points(kernel, seeds: Sequence, tol: float = 1e-8) -> RestPointSearch:
    """Multistart local descent on the squared drift norm.

    Each seed runs a constrained minimizer of ||dm/dt||^2 over the simplex;
    points with ||dm/dt||_inf <= tol are kept and deduplicated at distance
    1e-6. Seeds that fail to reach the tolerance are reported, not fatal.
    No global guarantee.
    """
    if len(seeds) < 1:
        raise ShapeMismatch("need at least one seed")
    drift = _drift_fn(kernel)
    result = RestPointSearch()
    for si, seed in enumerate(seeds):
        x0 = np.asarray(getattr(seed, "values", seed), dtype=float)
        nx = x0.size

        def objective(m):
            d = drift(np.maximum(m, 0.0))
            return float(d @ d)

        res = minimize(
            objective,
            x0,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * nx,
            constraints=[{"type": "eq", "fun": lambda m: m.sum() - 1.0}],
            options={"maxiter": 300, "ftol": 1e-18},
        )
        cand = np.maximum(res.x, 0.0)
        cand = cand / cand.sum()
        residual = float(np.abs(drift(cand)).max())
        # the squared-drift objective is flat near boundary rest points, so
        # the minimizer can stall at tiny interior masses; snap them to the
        # face when the snapped point still meets the tolerance
        snapped = np.where(cand < 1e-4, 0.0, cand)
        if snapped.sum() > 0 and not np.array_equal(snapped, cand):
            snapped = snapped / snapped.sum()
            res_snap = float(np.abs(drift(snapped)).max())
            if res_snap <= max(residual, tol):
                cand, residual = snapped, res_snap
        if residual <= tol:
            if all(np.linalg.norm(cand - p) > 1e-6 for p in result.points):
                result.points.append(cand)
        else:
            result.failures.append((si, residual))
    return result
