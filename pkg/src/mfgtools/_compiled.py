"""Compiled inner loops for the simplex integrators.

Only protocols whose payoff is affine in the profile (r = A m + c) are
compiled; everything else goes through the generic Python path in
``dynamics``. Both paths implement the same rate kernels, so they agree to
floating-point roundoff (covered by a cross-check test).
"""
import numpy as np
from numba import njit

REPLICATOR = 0
SMITH = 1
BNN = 2
SMOOTHED_BR = 3

PROTOCOL_IDS = {
    "replicator": REPLICATOR,
    "smith": SMITH,
    "bnn": BNN,
    "smoothed-best-response": SMOOTHED_BR,
}


@njit(cache=True)
def affine_drift(proto, A, c, eta, m):
    """Kolmogorov-forward drift of the protocol's rate kernel at profile m."""
    nx = m.shape[0]
    r = A @ m + c
    drift = np.zeros(nx)
    if proto == REPLICATOR:
        rbar = 0.0
        for x in range(nx):
            rbar += m[x] * r[x]
        for y in range(nx):
            drift[y] = m[y] * (r[y] - rbar)
        # written via the closed form; identical to the pairwise-imitation
        # kernel because [u]+ - [-u]+ = u
        return drift
    if proto == SMITH:
        for y in range(nx):
            inflow = 0.0
            outflow = 0.0
            for x in range(nx):
                if x == y:
                    continue
                d = r[y] - r[x]
                if d > 0.0:
                    inflow += m[x] * d
                else:
                    outflow += -d
            drift[y] = inflow - m[y] * outflow
        return drift
    if proto == BNN:
        rbar = 0.0
        for x in range(nx):
            rbar += m[x] * r[x]
        total_excess = 0.0
        excess = np.zeros(nx)
        for x in range(nx):
            e = r[x] - rbar
            excess[x] = e if e > 0.0 else 0.0
            total_excess += excess[x]
        for y in range(nx):
            drift[y] = excess[y] - m[y] * total_excess
        return drift
    # smoothed best response: switch rate to y is softmax(r / eta)[y]
    top = r[0] / eta
    for x in range(1, nx):
        v = r[x] / eta
        if v > top:
            top = v
    z = 0.0
    p = np.zeros(nx)
    for x in range(nx):
        p[x] = np.exp(r[x] / eta - top)
        z += p[x]
    for y in range(nx):
        drift[y] = p[y] / z - m[y]
    return drift


@njit(cache=True)
def replicator_mutation_window(A, eps_mut, counts0, T, lam, w0, w1, seed):
    """Uniformized count process for the pairwise-imitation + mutation
    generator; returns (exact time average of the profile over [w0, w1],
    status) with status 1 when the clock rate was exceeded.

    Uses numba's own seeded RNG; replication streams are derived by the
    caller from (seed, rep).
    """
    np.random.seed(seed)
    nx = counts0.shape[0]
    counts = counts0.astype(np.float64)
    n = 0.0
    for x in range(nx):
        n += counts[x]
    acc = np.zeros(nx)
    eps_each = eps_mut / (nx - 1) if nx > 1 else 0.0
    t = 0.0
    scale = 1.0 / (n * lam)
    r = np.zeros(nx)
    while True:
        t_next = t + np.random.exponential(scale)
        lo = t if t > w0 else w0
        hi = t_next if t_next < w1 else w1
        if hi > lo:
            for x in range(nx):
                acc[x] += (hi - lo) * counts[x]
        if t_next >= T:
            break
        u = np.random.random() * n
        cum = 0.0
        x = 0
        for xi in range(nx):
            cum += counts[xi]
            if u < cum:
                x = xi
                break
        for y in range(nx):
            r[y] = 0.0
            for z in range(nx):
                r[y] += A[y, z] * counts[z]
            r[y] /= n
        v = np.random.random()
        cumj = 0.0
        dest = x
        for y in range(nx):
            if y == x:
                continue
            rate = (counts[y] / n) * max(r[y] - r[x], 0.0) + eps_each
            cumj += rate / lam
            if v < cumj:
                dest = y
                break
        if cumj > 1.0:
            return acc, 1
        if dest != x:
            counts[x] -= 1.0
            counts[dest] += 1.0
        t = t_next
    denom = (w1 - w0) * n
    for x in range(nx):
        acc[x] /= denom
    return acc, 0


@njit(cache=True)
def integrate_affine(proto, A, c, eta, m0, dt, n_steps, use_rk4, renormalize, out):
    """Fixed-step integration; fills out[(n_steps+1), nx]. Returns 0 on
    success, 1 if any |m(x)| exceeded 2 (unstable)."""
    nx = m0.shape[0]
    m = m0.copy()
    out[0] = m
    for k in range(n_steps):
        if use_rk4:
            k1 = affine_drift(proto, A, c, eta, m)
            k2 = affine_drift(proto, A, c, eta, m + 0.5 * dt * k1)
            k3 = affine_drift(proto, A, c, eta, m + 0.5 * dt * k2)
            k4 = affine_drift(proto, A, c, eta, m + dt * k3)
            m = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            m = m + dt * affine_drift(proto, A, c, eta, m)
        if renormalize:
            s = 0.0
            for x in range(nx):
                if m[x] < 0.0:
                    m[x] = 0.0
                s += m[x]
            for x in range(nx):
                m[x] = m[x] / s
        for x in range(nx):
            if np.abs(m[x]) > 2.0:
                return 1
        out[k + 1] = m
    return 0
