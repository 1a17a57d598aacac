"""Independent reference implementations used only by the tests.

None of these call into the package's numerical code; they are written from
the model definitions with different algorithms (high-precision arithmetic,
simulation, brute-force enumeration, scalar bisection, grid search).
"""

from __future__ import annotations

import math

import mpmath
import numpy as np


# ---------------------------------------------------------------- choice model

def nested_logit_mp(utilities, sigmas, include_outside=True, dps=50):
    """Nested-logit probabilities straight from the closed form, in mpmath.

    Returns (list of per-nest float arrays, outside probability).
    """
    with mpmath.workdps(dps):
        nest_sums = [mpmath.fsum(mpmath.exp(mpmath.mpf(float(u)) / s) for u in us) for us, s in zip(utilities, sigmas)]
        denom = mpmath.fsum(ns ** s for ns, s in zip(nest_sums, sigmas)) + (1 if include_outside else 0)
        probs = [
            np.array([float(mpmath.exp(mpmath.mpf(float(u)) / s) * ns ** (s - 1) / denom) for u in us])
            for us, s, ns in zip(utilities, sigmas, nest_sums)
        ]
        outside = float(1 / denom) if include_outside else 0.0
    return probs, outside


def multinomial_logit(utilities, include_outside=True):
    """Plain logit over the concatenated alternatives (outside utility 0)."""
    flat = np.concatenate([np.asarray(u, dtype=float) for u in utilities])
    if include_outside:
        flat = np.append(flat, 0.0)
    z = np.exp(flat - flat.max())
    p = z / z.sum()
    out = p[-1] if include_outside else 0.0
    body = p[:-1] if include_outside else p
    split = np.cumsum([len(u) for u in utilities])[:-1]
    return np.split(body, split), out


def positive_stable(alpha, size, rng):
    """Positive alpha-stable draws with Laplace transform exp(-t**alpha) (Kanter)."""
    u = rng.uniform(0.0, math.pi, size)
    e = rng.exponential(1.0, size)
    if alpha == 1.0:
        return np.ones(size)
    a = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    return a * b


def sample_joint_gev(utilities, sigmas, n_draws, rng, include_outside=True):
    """Choice frequencies from jointly simulated nested GEV errors.

    Within nest k every error is sigma_k * (Gumbel + log S_k) with S_k
    positive stable of index sigma_k, which yields the nested GEV joint law.
    The outside alternative carries an independent Gumbel error.
    Returns counts in the flattened order (nest 0 ..., nest 1 ..., outside).
    """
    cols = []
    for u, s in zip(utilities, sigmas):
        u = np.asarray(u, dtype=float)
        shift = s * np.log(positive_stable(s, n_draws, rng))
        cols.append(u[None, :] + s * rng.gumbel(size=(n_draws, u.size)) + shift[:, None])
    if include_outside:
        cols.append(rng.gumbel(size=(n_draws, 1)))
    total = np.concatenate(cols, axis=1)
    return np.bincount(total.argmax(axis=1), minlength=total.shape[1])


def sample_two_stage_race(utilities, sigmas, n_draws, rng, include_outside=True):
    """Nest by Gumbel race on sigma_t * I_t, then alternative by race on U/sigma_t."""
    inclusive = [s * np.log(np.sum(np.exp(np.asarray(u) / s))) for u, s in zip(utilities, sigmas)]
    if include_outside:
        inclusive.append(0.0)
    nest = (np.array(inclusive)[None, :] + rng.gumbel(size=(n_draws, len(inclusive)))).argmax(axis=1)
    offsets = np.concatenate([[0], np.cumsum([len(u) for u in utilities])])
    counts = np.zeros(offsets[-1] + (1 if include_outside else 0), dtype=int)
    for t, (u, s) in enumerate(zip(utilities, sigmas)):
        m = int(np.sum(nest == t))
        if m:
            inner = (np.asarray(u)[None, :] / s + rng.gumbel(size=(m, len(u)))).argmax(axis=1)
            counts[offsets[t]:offsets[t + 1]] += np.bincount(inner, minlength=len(u))
    if include_outside:
        counts[-1] = int(np.sum(nest == len(utilities)))
    return counts


# ---------------------------------------------------------------- road network

def all_simple_paths(adj, origin, dest):
    """Enumerate every simple path (node tuple, length) by depth-first search."""
    out = []

    def walk(path, length):
        node = path[-1]
        if node == dest:
            out.append((tuple(path), length))
            return
        for nxt, w in adj.get(node, {}).items():
            if nxt not in path:
                walk(path + [nxt], length + w)

    walk([origin], 0.0)
    return out


def brute_shortest(adj, origin, dest):
    """Minimum-length path with the lexicographically smallest node sequence among ties."""
    paths = all_simple_paths(adj, origin, dest)
    if not paths:
        return None
    best = min(length for _, length in paths)
    ties = [p for p, length in paths if abs(length - best) <= 1e-12]
    return min(ties), best


# ---------------------------------------------------------------- power flow

def two_bus_bisection(p_load, q_load, x, v_slack=1.0, tol=1e-15):
    """Receiving-end voltage of a lossless line by bisection on the closed form.

    With the slack at angle 0, the PQ bus at (V, d) satisfies
        -P = V v_s sin(d) / x,  -Q = (V^2 - V v_s cos d) / x.
    Eliminating d gives a scalar equation in V; its high-voltage root
    is the first sign change met when scanning down from 2 * v_slack.
    """
    def f(v):
        s = -p_load * x / (v * v_slack)
        cos_d = math.sqrt(1.0 - s * s)
        return (v * v - v * v_slack * cos_d) / x + q_load

    # scan down from a generous upper bound to bracket the high-voltage root
    grid = np.linspace(2.0 * v_slack, abs(p_load) * x / v_slack + 1e-6, 20001)
    vals = [f(v) for v in grid]
    k = next(i for i in range(len(grid) - 1) if (vals[i] > 0) != (vals[i + 1] > 0))
    hi, lo = grid[k], grid[k + 1]
    f_hi = vals[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if (f_mid > 0) == (f_hi > 0):
            hi, f_hi = mid, f_mid
        else:
            lo = mid
    v = 0.5 * (lo + hi)
    delta = math.asin(-p_load * x / (v * v_slack))
    return v, delta


def mismatch_trig(ybus, vm, va, p_spec, q_spec):
    """Bus mismatches from the polar node equations, evaluated term by term."""
    g, b = ybus.real, ybus.imag
    n = len(vm)
    dp = np.zeros(n)
    dq = np.zeros(n)
    for i in range(n):
        for k in range(n):
            phi = va[i] - va[k]
            dp[i] += vm[i] * vm[k] * (g[i, k] * math.cos(phi) + b[i, k] * math.sin(phi))
            dq[i] += vm[i] * vm[k] * (g[i, k] * math.sin(phi) - b[i, k] * math.cos(phi))
    return dp - p_spec, dq - q_spec
