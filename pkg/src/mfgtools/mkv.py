"""One-dimensional weighted interacting-particle scheme and W1 metrics.

The update is explicit Euler with weight-averaged drift and volatility:

    x_j(t+d) = x_j(t) + d * sum_i w[i,j] f(t, x_j, u_j, x_i)
                      + (sum_i w[i,j] s(t, x_j, u_j, x_i)) * dB_j

with one independent Brownian driver per particle (the population average of
the volatility multiplies the particle's own increment). Each particle draws
from its own RNG substream keyed by (seed, rep, particle), so permuting
initial positions together with their keys permutes trajectories exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import quad

from .errors import (
    InsufficientReplications,
    NonIntegrable,
    NumericalBlowup,
    ShapeMismatch,
    StepInvalid,
)

BLOWUP_LIMIT = 1e12
_CHUNK = 1024
MIN_REPS = 30


def _zero_control(t, x):
    return np.zeros_like(x)


@dataclass(frozen=True)
class MkvModel:
    """Weight-averaged drift/volatility reductions plus a feedback control.

    ``drift_avg(t, x, u, W)`` and ``vol_avg(t, x, u, W)`` return per-particle
    values given all positions ``x`` (the ensemble is its own interaction
    pool); ``W`` is the (n, n) influence matrix with columns summing to 1, or
    None for uniform weights. ``types`` is carried for per-class models whose
    builders close over it.
    """

    drift_avg: Callable
    vol_avg: Callable
    control: Callable = _zero_control
    weights: Optional[np.ndarray] = None
    types: Optional[np.ndarray] = None
    name: str = "mkv"


def validate_weights(W: np.ndarray, n: int) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (n, n):
        raise ShapeMismatch(f"weight matrix must be ({n}, {n})")
    if W.min() < 0:
        raise ShapeMismatch("weights must be nonnegative")
    cols = W.sum(axis=0)
    if np.abs(cols - 1.0).max() > 1e-9:
        raise ShapeMismatch("weight columns must sum to 1")
    return W


def _uniform_mean(x: np.ndarray) -> float:
    # summed in sorted order so the reduction is invariant under particle
    # permutations (exact exchangeability) and under summation splits
    return float(np.sort(x).sum()) / x.size


def ou_model(a: float, b: float = 0.0, sigma: float = 1.0, weights=None) -> MkvModel:
    """Mean-reverting pairwise drift f(x, u, w) = a (w - x) + b with constant
    volatility; the weight average collapses to the weighted position mean."""

    def drift_avg(t, x, u, W):
        wmean = _uniform_mean(x) if W is None else x @ W
        return a * (wmean - x) + b

    def vol_avg(t, x, u, W):
        return np.full_like(x, sigma)

    return MkvModel(drift_avg=drift_avg, vol_avg=vol_avg, weights=weights, name="ou")


def pure_drift_model(c: float) -> MkvModel:
    def drift_avg(t, x, u, W):
        return np.full_like(x, c)

    def vol_avg(t, x, u, W):
        return np.zeros_like(x)

    return MkvModel(drift_avg=drift_avg, vol_avg=vol_avg, name="pure-drift")


def table_model(xs: Sequence, fs: Sequence, sigma: float = 0.0) -> MkvModel:
    """State-only drift interpolated from a breakpoint table (no interaction)."""
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)

    def drift_avg(t, x, u, W):
        return np.interp(x, xs, fs)

    def vol_avg(t, x, u, W):
        return np.full_like(x, sigma)

    return MkvModel(drift_avg=drift_avg, vol_avg=vol_avg, name="custom-table")


def pairwise_model(f: Callable, sigma: Callable, weights=None, control=_zero_control, name="pairwise") -> MkvModel:
    """Generic O(n^2) reduction of pairwise drift f(t, x_j, u_j, x_i) and
    volatility sigma(t, x_j, u_j, x_i)."""

    def reduce_pair(g, t, x, u, W):
        G = g(t, x[:, None], u[:, None], x[None, :])
        if W is None:
            # sorted per-row summation keeps the reduction invariant under
            # particle permutations and summation splits
            return np.sort(G, axis=1).sum(axis=1) / x.size
        return np.einsum("ji,ij->j", G, W)

    return MkvModel(
        drift_avg=lambda t, x, u, W: reduce_pair(f, t, x, u, W),
        vol_avg=lambda t, x, u, W: reduce_pair(sigma, t, x, u, W),
        control=control,
        weights=weights,
        name=name,
    )


@dataclass
class ParticlePaths:
    times: np.ndarray
    X: np.ndarray  # (n_times, n)
    dt: float
    seed: int
    rep: int

    @property
    def final(self) -> np.ndarray:
        return self.X[-1]


def _particle_rngs(seed: int, rep: int, keys) -> list:
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), int(rep)], spawn_key=(int(k),)))
        for k in keys
    ]


def simulate_particles(
    model: MkvModel,
    n: int,
    dt: float,
    T: float,
    seed: int = 0,
    rep: int = 0,
    x0: Optional[np.ndarray] = None,
    init: tuple = (0.0, 1.0),  # (mean, var) of the Gaussian initial law
    particle_keys: Optional[Sequence] = None,
    record_stride: Optional[int] = None,
) -> ParticlePaths:
    """Euler scheme over T/dt steps; deterministic given (seed, rep, keys).

    ``record_stride=None`` keeps only the initial and final slices; a stride
    k records every k-th step.
    """
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise StepInvalid(f"T={T} is not an integer multiple of dt={dt}")
    keys = range(n) if particle_keys is None else list(particle_keys)
    if len(list(keys)) != n:
        raise ShapeMismatch("need one RNG key per particle")
    rngs = _particle_rngs(seed, rep, keys)
    if x0 is None:
        mean0, var0 = init
        x = np.array([r.normal(mean0, np.sqrt(var0)) for r in rngs])
    else:
        x = np.asarray(x0, dtype=float).copy()
        if x.shape != (n,):
            raise ShapeMismatch(f"x0 must have shape ({n},)")
    W = None if model.weights is None else validate_weights(model.weights, n)

    record = record_stride is not None
    if record:
        idx = list(range(0, n_steps + 1, record_stride))
        if idx[-1] != n_steps:
            idx.append(n_steps)
    else:
        idx = [0, n_steps]
    times = np.array([k * dt for k in idx])
    out = np.empty((len(idx), n))
    out[0] = x
    out_pos = 1
    sqdt = np.sqrt(dt)

    k = 0
    while k < n_steps:
        chunk = min(_CHUNK, n_steps - k)
        dB = np.empty((chunk, n))
        for j, r in enumerate(rngs):
            dB[:, j] = r.standard_normal(chunk)
        dB *= sqdt
        for c in range(chunk):
            t = (k + c) * dt
            u = model.control(t, x)
            d = model.drift_avg(t, x, u, W)
            s = model.vol_avg(t, x, u, W)
            x = x + dt * d + s * dB[c]
            step_idx = k + c + 1
            if out_pos < len(idx) and idx[out_pos] == step_idx:
                out[out_pos] = x
                out_pos += 1
        if np.abs(x).max() > BLOWUP_LIMIT:
            raise NumericalBlowup(f"|x| exceeded {BLOWUP_LIMIT:g} at step {k + chunk}")
        k += chunk
    return ParticlePaths(times=times, X=out, dt=dt, seed=seed, rep=rep)


# --------------------------------------------------------------------------
# CDFs and the W1 metric
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous weighted step CDF."""

    xs: np.ndarray  # sorted support
    cum: np.ndarray  # cumulative weights, ends at 1

    @classmethod
    def from_samples(cls, positions, weights=None) -> "EmpiricalCdf":
        x = np.asarray(positions, dtype=float)
        if weights is None:
            w = np.full(x.size, 1.0 / x.size)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != x.shape or w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
                raise ShapeMismatch("weights must be nonnegative and sum to 1")
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cum = np.cumsum(w[order])
        cum[-1] = 1.0
        return cls(xs=xs, cum=cum)

    def __call__(self, w) -> np.ndarray:
        pos = np.searchsorted(self.xs, w, side="right")
        return np.where(pos > 0, self.cum[np.maximum(pos - 1, 0)], 0.0)


def empirical_cdf(positions, weights=None) -> EmpiricalCdf:
    return EmpiricalCdf.from_samples(positions, weights)


@dataclass(frozen=True)
class AnalyticCdf:
    """Arbitrary continuous CDF; distances against steps use adaptive
    quadrature at 1e-8 tolerance. Tails must be integrable."""

    cdf: Callable
    lower_tail_decay: float  # location below which F is negligible
    upper_tail_decay: float

    def __call__(self, w):
        return self.cdf(w)


@dataclass(frozen=True)
class GaussianCdf:
    """Gaussian CDF with closed-form segment integrals (exact, no quadrature)."""

    mean: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ShapeMismatch("variance must be nonnegative")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.var))

    def cdf(self, w):
        if self.var == 0.0:
            return (np.asarray(w) >= self.mean).astype(float)
        return stats.norm.cdf(w, loc=self.mean, scale=self.sigma)

    def __call__(self, w):
        return self.cdf(w)

    def integral_cdf(self, a, b):
        """Integral of the CDF over [a, b] (antiderivative sigma*(z Phi(z) + phi(z)))."""
        if self.var == 0.0:
            lo = np.maximum(a, self.mean)
            return np.maximum(b - lo, 0.0)
        za = (np.asarray(a, dtype=float) - self.mean) / self.sigma
        zb = (np.asarray(b, dtype=float) - self.mean) / self.sigma
        anti = lambda z: self.sigma * (z * stats.norm.cdf(z) + stats.norm.pdf(z))
        return anti(zb) - anti(za)


def w1_distance(F, G) -> float:
    """Integral of |F - G|: exact for step-vs-step and step-vs-Gaussian,
    adaptive quadrature (1e-8) for generic analytic CDFs."""
    if isinstance(F, EmpiricalCdf) and isinstance(G, EmpiricalCdf):
        xs = np.union1d(F.xs, G.xs)
        if xs.size < 2:
            return 0.0
        diffs = np.abs(F(xs[:-1]) - G(xs[:-1]))
        return float(np.sum(diffs * np.diff(xs)))
    if isinstance(F, (AnalyticCdf, GaussianCdf)) and isinstance(G, EmpiricalCdf):
        return w1_distance(G, F)
    if isinstance(F, EmpiricalCdf) and isinstance(G, GaussianCdf):
        return _w1_step_gaussian(F, G)
    if isinstance(F, EmpiricalCdf) and isinstance(G, AnalyticCdf):
        return _w1_step_quad(F, G)
    raise NonIntegrable(f"unsupported CDF pair ({type(F).__name__}, {type(G).__name__})")


def _w1_step_gaussian(F: EmpiricalCdf, G: GaussianCdf) -> float:
    """Exact piecewise integration: on each constant segment of F the
    crossing point with the Gaussian CDF is its quantile, and the integral of
    the CDF has a closed-form antiderivative."""
    xs, cum = F.xs, F.cum
    if G.sigma == 0.0:
        # degenerate reference: |F - 1{w >= mean}| integrated against steps
        H = EmpiricalCdf(xs=np.array([G.mean]), cum=np.array([1.0]))
        return w1_distance(F, H)
    # left tail: F = 0 there, so the integrand is G itself
    z0 = (xs[0] - G.mean) / G.sigma
    total = G.sigma * (z0 * stats.norm.cdf(z0) + stats.norm.pdf(z0))
    # interior segments: F = c on [a, b); split at the crossing G^{-1}(c)
    a, b, c = xs[:-1], xs[1:], cum[:-1]
    if a.size:
        cross = G.mean + G.sigma * stats.norm.ppf(np.clip(c, 1e-300, 1.0 - 1e-16))
        mid = np.clip(cross, a, b)
        seg = (c * (mid - a) - G.integral_cdf(a, mid)) + (G.integral_cdf(mid, b) - c * (b - mid))
        total += float(seg.sum())
    # right tail: F = 1 there, integrand is 1 - G
    zl = (xs[-1] - G.mean) / G.sigma
    total += G.sigma * (stats.norm.pdf(zl) - zl * (1.0 - stats.norm.cdf(zl)))
    return float(total)


def _w1_step_quad(F: EmpiricalCdf, G: AnalyticCdf) -> float:
    xs = F.xs
    lo = min(G.lower_tail_decay, xs[0])
    hi = max(G.upper_tail_decay, xs[-1])
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise NonIntegrable("analytic CDF must declare finite tail-decay locations")
    total, _ = quad(lambda w: abs(float(F(w)) - float(G(w))), lo, xs[0], epsabs=1e-9, limit=200)
    val, _ = quad(lambda w: float(G(w)), -np.inf, lo, epsabs=1e-9)
    total += val
    for a, b in zip(xs[:-1], xs[1:]):
        val, _ = quad(lambda w: abs(float(F(w)) - float(G(w))), a, b, epsabs=1e-9, limit=100)
        total += val
    val, _ = quad(lambda w: abs(1.0 - float(G(w))), xs[-1], hi, epsabs=1e-9, limit=200)
    total += val
    val, _ = quad(lambda w: 1.0 - float(G(w)), hi, np.inf, epsabs=1e-9)
    total += val
    return float(total)


# --------------------------------------------------------------------------
# analytic oracle and rate studies
# --------------------------------------------------------------------------

def ou_oracle(a: float, b: float, s: float, mean0: float, var0: float, t: float) -> tuple:
    """Limiting law of the mean-reverting model: the population mean obeys
    d mbar = b dt (the reversion term self-averages), individual variance
    relaxes to s^2 / 2a."""
    if a <= 0:
        raise ShapeMismatch("need a > 0")
    mean = mean0 + b * t
    var = var0 * np.exp(-2 * a * t) + (s**2 / (2 * a)) * (1 - np.exp(-2 * a * t))
    return float(mean), float(var)


@dataclass(frozen=True)
class OuConfig:
    a: float
    b: float = 0.0
    sigma: float = 1.0
    mean0: float = 0.0
    var0: float = 1.0

    def limit_cdf(self, t: float) -> GaussianCdf:
        mean, var = ou_oracle(self.a, self.b, self.sigma, self.mean0, self.var0, t)
        return GaussianCdf(mean, var)


@dataclass
class MkvRateReport:
    rows: list  # dicts: n, delta, mean, se
    n_fit_slope: float
    delta_fit_slope: float
    n_fit_points: list
    delta_fit_points: list


def _mean_w1_at(cfg: OuConfig, n: int, delta: float, T: float, reps: int, seed: int, reference) -> tuple:
    model = ou_model(cfg.a, cfg.b, cfg.sigma)
    dists = np.empty(reps)
    for rep in range(reps):
        paths = simulate_particles(model, n, delta, T, seed=seed, rep=rep, init=(cfg.mean0, cfg.var0))
        F = empirical_cdf(paths.final)
        dists[rep] = w1_distance(F, reference)
    return float(dists.mean()), float(dists.std(ddof=1) / np.sqrt(reps))


def rate_study(
    cfg: OuConfig,
    ns: Sequence,
    deltas: Sequence,
    T: float,
    reps: int,
    seed: int = 0,
    reference: str = "oracle",
    threads: int = 1,
) -> MkvRateReport:
    """Monte Carlo table of E||F_limit - F_n||_1 at time T over two slices
    (vary n at the smallest delta; vary delta at the largest n) plus the two
    fitted log-log orders.

    ``reference="oracle"`` uses the analytic Gaussian limit;
    ``reference="fine"`` uses one fine-grid large-n run
    (delta_ref = min(deltas)/16, n_ref = 4*max(ns)).
    """
    ns = sorted(int(v) for v in ns)
    deltas = sorted(float(v) for v in deltas)
    if reps < MIN_REPS:
        raise InsufficientReplications(f"need at least {MIN_REPS} replications, got {reps}")
    if reference == "oracle":
        ref = cfg.limit_cdf(T)
    else:
        model = ou_model(cfg.a, cfg.b, cfg.sigma)
        paths = simulate_particles(
            model, 4 * max(ns), deltas[0] / 16.0, T, seed=seed, rep=10**6, init=(cfg.mean0, cfg.var0)
        )
        ref = empirical_cdf(paths.final)
    from ._util import ordered_map

    jobs = [(n, deltas[0]) for n in ns] + [(ns[-1], d) for d in deltas[1:]]
    results = ordered_map(lambda nd: _mean_w1_at(cfg, nd[0], nd[1], T, reps, seed, ref), jobs, threads)
    rows = [
        {"n": n, "delta": d, "mean": mean, "se": se}
        for (n, d), (mean, se) in zip(jobs, results)
    ]
    n_points = [(row["n"], row["mean"]) for row in rows[: len(ns)]]
    d_points = [(deltas[0], n_points[-1][1])] + [
        (row["delta"], row["mean"]) for row in rows[len(ns):]
    ]
    def _fit(points):
        if len(points) < 2:
            return float("nan")
        return float(np.polyfit(np.log([p[0] for p in points]), np.log([p[1] for p in points]), 1)[0])

    n_slope = _fit(n_points)
    d_slope = _fit(d_points)
    return MkvRateReport(
        rows=rows,
        n_fit_slope=n_slope,
        delta_fit_slope=d_slope,
        n_fit_points=n_points,
        delta_fit_points=d_points,
    )
