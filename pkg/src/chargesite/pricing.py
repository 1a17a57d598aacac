"""Bertrand retail-price equilibrium among the three providers.

Each provider charges one price across all of its stations. For a fixed
triple of placement policies, equilibrium prices solve the providers'
first-order conditions dR_k/dp_k = 0 simultaneously.

Within-nest station shares do not depend on prices, so with
m_nk = sum_j P(j|k) c_jk (the agent-specific mean wholesale cost) and
P_nk the nest share, the condition for provider k reduces to

    F_k = sum_n q_n P_nk [1 + b_n (1 - P_nk)(p_k - m_nk)],   b_n = beta / i_n

which gives the Jacobian in closed form. Newton steps are taken on F_k
divided by provider k's expected volume, which has the same roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import N_PROVIDERS, ChoiceContext
from .errors import DimensionMismatch, NonConvergence, Unbounded

TOLERANCE = 1e-8
MAX_ITER = 200
MAX_HALVINGS = 30


@dataclass
class PriceResult:
    prices: np.ndarray  # NaN for providers without stations
    residual: np.ndarray
    iterations: int
    active: np.ndarray

    @property
    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def lmp_table(lmp, n_sites: int) -> np.ndarray:
    """Broadcast per-site wholesale prices to an ``(L, 3)`` table."""
    c = np.asarray(lmp, dtype=float)
    if c.shape == (n_sites,):
        c = np.repeat(c[:, None], N_PROVIDERS, axis=1)
    if c.shape != (n_sites, N_PROVIDERS):
        raise DimensionMismatch(f"LMP table must have shape ({n_sites},) or ({n_sites}, 3), got {c.shape}")
    return c


def _policies(ctx: ChoiceContext, policies) -> np.ndarray:
    p = np.asarray(policies, dtype=bool)
    if p.shape != (N_PROVIDERS, ctx.n_sites):
        raise DimensionMismatch(f"policies must have shape (3, {ctx.n_sites}), got {p.shape}")
    return p


def provider_profit(ctx: ChoiceContext, policies, prices, lmp, theta=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(profit, revenue)`` per provider.

    Revenue is the retail margin over wholesale cost summed over placed
    stations; profit further subtracts the placement cost of those stations.
    """
    policies = _policies(ctx, policies)
    c = lmp_table(lmp, ctx.n_sites)
    prices = np.nan_to_num(np.asarray(prices, dtype=float))
    phi, _ = ctx.probabilities(prices, policies)
    psi = np.tensordot(ctx.demand, phi, axes=(0, 0))  # (L, 3)
    margin = prices[None, :] - c
    revenue = np.sum(policies.T * margin * psi, axis=0)
    if theta is None:
        return revenue.copy(), revenue
    theta = np.asarray(theta, dtype=float).reshape(N_PROVIDERS, ctx.n_sites)
    placement = np.sum(theta * policies, axis=1)
    return revenue - placement, revenue


def _nest_terms(ctx, policies, prices, c):
    phi, _ = ctx.probabilities(prices, policies)
    share = phi.sum(axis=1)  # (N, 3)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_cost = np.where(share > 0, np.einsum("njk,jk->nk", phi, c) / share, 0.0)
    slope = ctx.coeffs.beta / ctx.income
    return phi, share, mean_cost, slope


def foc_residual(ctx: ChoiceContext, policies, prices, lmp) -> np.ndarray:
    """dR_k/dp_k for each provider; zero entries for inactive providers."""
    policies = _policies(ctx, policies)
    c = lmp_table(lmp, ctx.n_sites)
    prices = np.nan_to_num(np.asarray(prices, dtype=float))
    phi, _ = ctx.probabilities(prices, policies)
    out = np.zeros(N_PROVIDERS)
    for k in range(N_PROVIDERS):
        if not policies[k].any():
            continue
        dphi, _ = ctx.price_gradient(prices, policies, k)
        terms = phi[:, :, k] + (prices[k] - c[None, :, k]) * dphi[:, :, k]
        out[k] = np.sum(ctx.demand[:, None] * policies[k][None, :] * terms)
    return out


def _residual_and_jacobian(ctx, policies, prices, c, active):
    """FOC residual F, its demand-normalised form g = F / V and dg/dp.

    V_k = sum_n q_n P_nk is provider k's expected volume. g has the same
    roots as F but does not flatten out as demand vanishes at high prices,
    so Newton steps on g stay well scaled far from the equilibrium.
    """
    phi, share, mean_cost, slope = _nest_terms(ctx, policies, prices, c)
    q = ctx.demand
    gap = prices[None, :] - mean_cost  # (N, 3)
    inner = 1.0 + slope[:, None] * (1.0 - share) * gap
    f = np.sum(q[:, None] * share * inner, axis=0)
    volume = np.sum(q[:, None] * share, axis=0)
    jac_f = np.zeros((N_PROVIDERS, N_PROVIDERS))
    jac_v = np.zeros((N_PROVIDERS, N_PROVIDERS))
    for l in range(N_PROVIDERS):
        e = np.zeros(N_PROVIDERS)
        e[l] = 1.0
        dshare = slope[:, None] * share * (e[None, :] - share[:, l : l + 1])  # dP_nk/dp_l
        dinner = slope[:, None] * (-dshare * gap + (1.0 - share) * e[None, :])
        jac_f[:, l] = np.sum(q[:, None] * (dshare * inner + share * dinner), axis=0)
        jac_v[:, l] = np.sum(q[:, None] * dshare, axis=0)
    idx = np.flatnonzero(active)
    f, volume = f[idx], volume[idx]
    if np.any(~(volume > 0)):
        return f, None, None
    g = f / volume
    jac_g = (jac_f[np.ix_(idx, idx)] - g[:, None] * jac_v[np.ix_(idx, idx)]) / volume[:, None]
    return f, g, jac_g


def solve_bertrand(
    ctx: ChoiceContext,
    policies,
    lmp,
    *,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
    start=None,
    multistart: int = 0,
    seed: int = 0,
) -> PriceResult:
    """Damped Newton solve of the first-order conditions.

    The canonical start is the mean wholesale cost of each provider's
    stations plus the logit markup 1/mean(|beta|/i_n). Each Newton step is
    halved until the volume-normalised residual infinity-norm decreases (at
    most 30 times). Convergence means ``max |F_k| <= tol``.
    With ``multistart > 0`` that many extra randomised starts are tried when
    the canonical start fails; the first root found is returned.
    """
    policies = _policies(ctx, policies)
    c = lmp_table(lmp, ctx.n_sites)
    active = policies.any(axis=1)
    prices = np.full(N_PROVIDERS, np.nan)
    if not active.any():
        return PriceResult(prices, np.zeros(0), 0, active)
    beta = ctx.coeffs.beta
    if not beta < 0:
        raise Unbounded("demand does not fall with price (beta >= 0); profit grows without bound")
    if ctx.n_agents == 0 or not np.any(ctx.demand > 0):
        raise Unbounded("no demand to price against")

    markup = 1.0 / np.mean(abs(beta) / ctx.income)
    mean_c = np.array([c[policies[k], k].mean() if active[k] else 0.0 for k in range(N_PROVIDERS)])
    canonical = mean_c + markup if start is None else np.asarray(start, dtype=float)
    starts = [canonical]
    if multistart:
        rng = np.random.default_rng(seed)
        starts += [mean_c + markup * rng.uniform(0.2, 3.0, N_PROVIDERS) for _ in range(multistart)]
    last_error = None
    for x0 in starts:
        try:
            return _damped_newton(ctx, policies, c, active, x0, tol, max_iter)
        except NonConvergence as exc:
            last_error = exc
    raise last_error


def _damped_newton(ctx, policies, c, active, x0, tol, max_iter):
    idx = np.flatnonzero(active)
    p = np.zeros(N_PROVIDERS)
    p[idx] = np.asarray(x0, dtype=float)[idx]
    f, g, jac = _residual_and_jacobian(ctx, policies, p, c, active)
    if g is None:
        raise NonConvergence("no demand at the starting prices")
    merit = np.max(np.abs(g))
    it = 0
    # F -> 0 alone is also reached as demand vanishes; require g small too
    while not (np.max(np.abs(f)) <= tol and merit <= np.sqrt(tol)):
        if it >= max_iter:
            raise NonConvergence(
                f"price equilibrium not found in {max_iter} iterations (residual {np.max(np.abs(f)):.3e})"
            )
        it += 1
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular price Jacobian: {exc}") from exc
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = p.copy()
            trial[idx] += t * step
            f_new, g_new, jac_new = _residual_and_jacobian(ctx, policies, trial, c, active)
            if g_new is not None and np.max(np.abs(g_new)) < merit:
                break
            t *= 0.5
        else:
            raise NonConvergence(f"line search stalled at residual {np.max(np.abs(f)):.3e}")
        p, f, g, jac = trial, f_new, g_new, jac_new
        merit = np.max(np.abs(g))
    prices = np.full(N_PROVIDERS, np.nan)
    prices[idx] = p[idx]
    residual = np.zeros(N_PROVIDERS)
    residual[idx] = f
    return PriceResult(prices, residual, it, active)
