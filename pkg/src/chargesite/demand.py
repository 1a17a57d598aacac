"""Nested-logit charging demand.

Alternatives are charging stations grouped into one nest per service
provider (charging level). Home charging is the outside good: a separate
nest holding a single alternative whose utility is fixed at zero.

All probability arithmetic is done in the log domain, so utilities of
magnitude several hundred evaluate without overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, DomainError, EmptyNest, NoPath

N_PROVIDERS = 3


@dataclass(frozen=True)
class LevelAttributes:
    """Charging-level ratings (North American SAE J1772 levels)."""

    level: int
    charging_time: float  # hours
    voltage: float = 0.0
    current: float = 0.0

    def __post_init__(self):
        if not self.charging_time > 0:
            raise DomainError(f"charging time of level {self.level} must be positive")

    @property
    def power_kw(self) -> float:
        return self.voltage * self.current / 1000.0


# Midpoints of the rated ranges: 16-18 h, 3-8 h, < 0.5 h; 208-240 V for level 2.
DEFAULT_LEVELS = (
    LevelAttributes(1, 17.0, 120.0, 12.0),
    LevelAttributes(2, 5.5, 224.0, 32.0),
    LevelAttributes(3, 0.5, 600.0, 400.0),
)


def _triple(value, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (N_PROVIDERS,)).copy()
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ChoiceCoefficients:
    """Utility weights of the nested-logit model.

    ``sigma``, ``mu``, ``eta``, ``gamma``, ``lam`` and ``delta`` are per-nest
    (one entry per provider); scalars are broadcast to all three nests.
    """

    alpha: float
    beta: float
    sigma: Sequence[float] = (1.0, 1.0, 1.0)
    mu: Sequence[float] = (0.0, 0.0, 0.0)
    eta: Sequence[float] = (0.0, 0.0, 0.0)
    gamma: Sequence[float] = (0.0, 0.0, 0.0)
    lam: Sequence[float] = (0.0, 0.0, 0.0)
    delta: Sequence[float] = (0.0, 0.0, 0.0)
    d_th: float = 1.0
    q_a: float = 10.0
    q_b: float = 40.0

    def __post_init__(self):
        for name in ("sigma", "mu", "eta", "gamma", "lam", "delta"):
            object.__setattr__(self, name, _triple(getattr(self, name), name))
        check_sigmas(self.sigma)
        if self.d_th < 0:
            raise DomainError("d_th must be non-negative")
        if not 0 <= self.q_a <= self.q_b:
            raise DomainError("need 0 <= q_a <= q_b")

    @classmethod
    def from_dict(cls, raw: dict) -> "ChoiceCoefficients":
        nests = raw.get("nests")
        kw = {k: raw[k] for k in ("alpha", "beta", "d_th", "q_a", "q_b") if k in raw}
        if nests is not None:
            if len(nests) != N_PROVIDERS:
                raise DomainError("coefficients need exactly three nests")
            for name in ("sigma", "mu", "eta", "gamma", "lam", "delta"):
                kw[name] = [float(n.get(name, 1.0 if name == "sigma" else 0.0)) for n in nests]
        else:
            for name in ("sigma", "mu", "eta", "gamma", "lam", "delta"):
                if name in raw:
                    kw[name] = raw[name]
        return cls(**kw)


@dataclass(frozen=True)
class EvAgent:
    id: int
    income: float
    origin: object
    dest: object
    demand: float  # kWh purchased per charging event

    def __post_init__(self):
        if not self.income > 0:
            raise DomainError(f"agent {self.id}: income must be positive")
        if not self.demand >= 0:
            raise DomainError(f"agent {self.id}: demand must be non-negative")


@dataclass(frozen=True)
class StationObservables:
    """Trip-dependent and site attributes of a station (array-valued allowed)."""

    detour: np.ndarray | float
    near_destination: np.ndarray | int
    restaurant: np.ndarray | int = 0
    shopping: np.ndarray | int = 0
    supermarket: np.ndarray | int = 0


@dataclass
class ChoiceMatrix:
    """Per-nest station probabilities plus the outside-good probability."""

    probs: list
    outside: np.ndarray

    def total(self) -> np.ndarray:
        return sum(p.sum(axis=-1) for p in self.probs) + self.outside


@dataclass
class Decomposition:
    conditional: list  # P(j | k)
    nest: list  # P(k)
    inclusive: list  # I_k
    outside: np.ndarray


def check_sigmas(sigmas) -> None:
    s = np.asarray(sigmas, dtype=float)
    if np.any(~(s > 0)) or np.any(s > 1):
        raise DomainError("nest parameters sigma must lie in (0, 1]")


def provider_utility(level: LevelAttributes | None, price, income, coeffs: ChoiceCoefficients):
    """Utility of choosing a provider's charging level; 0 for the outside good."""
    income = np.asarray(income, dtype=float)
    if level is None:
        return np.zeros_like(income) if income.ndim else 0.0
    if not level.charging_time > 0:
        raise DomainError("charging time must be positive")
    if np.any(~(income > 0)):
        raise DomainError("income must be positive")
    out = coeffs.alpha / level.charging_time + coeffs.beta * np.asarray(price, dtype=float) / income
    return out if np.ndim(out) else float(out)


def station_utility(obs: StationObservables, coeffs: ChoiceCoefficients, nest: int):
    out = (
        coeffs.mu[nest] * np.asarray(obs.detour, dtype=float)
        + coeffs.eta[nest] * np.asarray(obs.near_destination, dtype=float)
        + coeffs.gamma[nest] * np.asarray(obs.restaurant, dtype=float)
        + coeffs.lam[nest] * np.asarray(obs.shopping, dtype=float)
        + coeffs.delta[nest] * np.asarray(obs.supermarket, dtype=float)
    )
    return out if np.ndim(out) else float(out)


def _nest_logs(utilities, sigmas):
    """Per-nest pieces of the log-domain evaluation.

    For each nest returns the shifted scaled utilities ``(U - max U)/sigma``,
    their log-sum-exp ``ls`` (in [0, log J]) and the upper-level term
    ``sigma * I = max U + sigma * ls``. Shifting before dividing by sigma keeps
    full precision when sigma is small and U/sigma is huge.
    """
    if len(utilities) != len(sigmas):
        raise DimensionMismatch("one sigma per nest required")
    check_sigmas(sigmas)
    shifted, ls, upper = [], [], []
    for u, s in zip(utilities, sigmas):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] == 0:
            raise EmptyNest("every active nest needs at least one alternative")
        top = u.max(axis=-1)
        z = (u - top[..., None]) / s
        lse = logsumexp(z, axis=-1)
        shifted.append(z)
        ls.append(lse)
        upper.append(top + s * lse)
    return shifted, ls, upper


def _log_denominator(upper, include_outside):
    terms = list(upper)
    if include_outside:
        terms.append(np.zeros_like(terms[0]))
    return logsumexp(np.stack(np.broadcast_arrays(*terms)), axis=0)


def choice_probabilities(utilities: Sequence, sigmas: Sequence[float], include_outside: bool = True) -> ChoiceMatrix:
    """Nested-logit choice probabilities.

    Evaluates Phi_j = exp(U_j/s) * (sum_l exp(U_l/s))**(s-1) / D in the log
    domain, where D sums the nest terms (plus 1 for the outside good).

    Parameters
    ----------
    utilities : sequence of arrays
        One array per nest, shape ``(..., J_k)``; leading axes (e.g. agents)
        must broadcast across nests.
    sigmas : sequence of float
        Nest dissimilarity parameters in (0, 1].
    include_outside : bool
        Add the zero-utility outside alternative as its own nest.
    """
    shifted, ls, upper = _nest_logs(utilities, sigmas)
    log_d = _log_denominator(upper, include_outside)
    probs = []
    for u, z, s, l in zip(utilities, shifted, sigmas, ls):
        top = np.asarray(u, dtype=float).max(axis=-1)
        probs.append(np.exp(z + ((s - 1.0) * l + top - log_d)[..., None]))
    outside = np.exp(-log_d) if include_outside else np.zeros_like(log_d)
    return ChoiceMatrix(probs=probs, outside=outside)


def choice_probabilities_decomposed(
    utilities: Sequence,
    sigmas: Sequence[float],
    include_outside: bool = True,
    nest_utilities: Sequence | None = None,
) -> Decomposition:
    """Split probabilities into P(j|k) * P(k) with inclusive values I_k.

    ``nest_utilities`` gives the provider-level utility W_k so that the
    station-level part is V = U - W; when omitted W = 0 and V = U. Then
    I_k = log sum_j exp(V_j/sigma_k) and P(k) is a logit over W_k + sigma_k I_k.
    """
    if nest_utilities is None:
        station = [np.asarray(u, dtype=float) for u in utilities]
        nest_w = [0.0] * len(station)
    else:
        nest_w = [np.asarray(w, dtype=float) for w in nest_utilities]
        station = [np.asarray(u, dtype=float) - w[..., None] for u, w in zip(utilities, nest_w)]
    shifted, ls, upper_v = _nest_logs(station, sigmas)
    conditional = [np.exp(z - l[..., None]) for z, l in zip(shifted, ls)]
    inclusive = [v.max(axis=-1) / s + l for v, s, l in zip(station, sigmas, ls)]
    upper = [w + sv for w, sv in zip(nest_w, upper_v)]
    log_d = _log_denominator(upper, include_outside)
    nest = [np.exp(u - log_d) for u in upper]
    outside = np.exp(-log_d) if include_outside else np.zeros_like(log_d)
    return Decomposition(conditional=conditional, nest=nest, inclusive=inclusive, outside=outside)


def aggregate_demand(population, probs) -> np.ndarray:
    """Expected kWh per station: psi = sum_n q_n * Phi_n.

    ``population`` is a sequence of :class:`EvAgent` or an array of demands;
    ``probs`` has agents on its first axis (or is a list of such arrays).
    """
    if isinstance(probs, ChoiceMatrix):
        probs = probs.probs
    if isinstance(probs, (list, tuple)):
        return [aggregate_demand(population, p) for p in probs]
    q = np.asarray([a.demand for a in population] if _is_agents(population) else population, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if q.size == 0 and probs.size == 0:
        return np.zeros(probs.shape[1:])
    if probs.shape[0] != q.shape[0]:
        raise DimensionMismatch(f"{q.shape[0]} agents but {probs.shape[0]} probability rows")
    # fixed-order reduction keeps results bit-identical across runs
    return np.tensordot(q, probs, axes=(0, 0))


def _is_agents(population) -> bool:
    return len(population) > 0 and isinstance(population[0], EvAgent)


@dataclass
class ChoiceContext:
    """Everything needed to evaluate Phi for a population against L candidate sites.

    Station utilities are precomputed per (agent, candidate, provider) since
    they do not depend on prices or placements.
    """

    coeffs: ChoiceCoefficients
    income: np.ndarray  # (N,)
    demand: np.ndarray  # (N,)
    station_util: np.ndarray  # (N, L, 3)
    levels: tuple = DEFAULT_LEVELS
    include_outside: bool = True
    detour: np.ndarray | None = field(default=None, repr=False)  # (N, L)
    near_destination: np.ndarray | None = field(default=None, repr=False)  # (N, L)

    @property
    def n_agents(self) -> int:
        return self.income.shape[0]

    @property
    def n_sites(self) -> int:
        return self.station_util.shape[1]

    def provider_utilities(self, prices) -> np.ndarray:
        prices = np.nan_to_num(np.asarray(prices, dtype=float))
        t = np.array([lv.charging_time for lv in self.levels])
        return self.coeffs.alpha / t[None, :] + self.coeffs.beta * prices[None, :] / self.income[:, None]

    def probabilities(self, prices, policies) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(phi, outside)`` with phi shaped ``(N, L, 3)``.

        Sites not placed by a provider get probability zero; providers with no
        stations drop out of the choice set entirely.
        """
        policies = np.asarray(policies, dtype=bool).reshape(N_PROVIDERS, self.n_sites)
        n = self.n_agents
        phi = np.zeros((n, self.n_sites, N_PROVIDERS))
        active = [k for k in range(N_PROVIDERS) if policies[k].any()]
        if not active:
            return phi, np.ones(n) if self.include_outside else np.zeros(n)
        w = self.provider_utilities(prices)
        utils = [w[:, k, None] + self.station_util[:, policies[k], k] for k in active]
        cm = choice_probabilities(utils, [self.coeffs.sigma[k] for k in active], self.include_outside)
        for k, p in zip(active, cm.probs):
            phi[:, policies[k], k] = p
        return phi, cm.outside

    def price_gradient(self, prices, policies, provider: int) -> tuple[np.ndarray, np.ndarray]:
        """Analytic d(phi)/d(p_provider) and d(outside)/d(p_provider).

        A provider's price shifts every utility in its nest by beta/i_n, which
        leaves within-nest shares unchanged and moves only the nest share P_k:
        dPhi_jt/dp_k = Phi_jt * (beta/i_n) * ([t == k] - P_k).
        """
        phi, outside = self.probabilities(prices, policies)
        slope = self.coeffs.beta / self.income  # (N,)
        share_k = phi[:, :, provider].sum(axis=1)  # (N,)
        indicator = np.zeros(N_PROVIDERS)
        indicator[provider] = 1.0
        dphi = phi * slope[:, None, None] * (indicator[None, None, :] - share_k[:, None, None])
        doutside = -outside * slope * share_k
        return dphi, doutside


def build_choice_context(
    net,
    site_nodes: Sequence,
    amenities: np.ndarray,
    coeffs: ChoiceCoefficients,
    agents: Sequence[EvAgent],
    levels: tuple = DEFAULT_LEVELS,
    include_outside: bool = True,
) -> ChoiceContext:
    """Compute detours and destination indicators for every agent and site.

    ``amenities`` is an ``(L, 3)`` 0/1 array of (restaurant, shopping,
    supermarket) flags.
    """
    site_nodes = list(site_nodes)
    amenities = np.asarray(amenities, dtype=float).reshape(len(site_nodes), 3)
    n = len(agents)
    detour = np.zeros((n, len(site_nodes)))
    near = np.zeros((n, len(site_nodes)))
    cache: dict = {}

    def dist_from(node):
        if node not in cache:
            cache[node] = net.distances_from(node)
        return cache[node]

    for i, agent in enumerate(agents):
        from_origin = dist_from(agent.origin)
        direct = from_origin.get(agent.dest, math.inf)
        if math.isinf(direct):
            raise NoPath(f"agent {agent.id}: destination unreachable")
        for j, site in enumerate(site_nodes):
            from_site = dist_from(site)
            leg = from_origin.get(site, math.inf) + from_site.get(agent.dest, math.inf)
            if math.isinf(leg):
                raise NoPath(f"site {site!r} unreachable for agent {agent.id}")
            detour[i, j] = max(leg - direct, 0.0)
            near[i, j] = float(from_site.get(agent.dest, math.inf) <= coeffs.d_th)

    station_util = np.zeros((n, len(site_nodes), N_PROVIDERS))
    for k in range(N_PROVIDERS):
        obs = StationObservables(detour, near, amenities[None, :, 0], amenities[None, :, 1], amenities[None, :, 2])
        station_util[:, :, k] = station_utility(obs, coeffs, k)

    return ChoiceContext(
        coeffs=coeffs,
        income=np.array([a.income for a in agents], dtype=float),
        demand=np.array([a.demand for a in agents], dtype=float),
        station_util=station_util,
        levels=tuple(levels),
        include_outside=include_outside,
        detour=detour,
        near_destination=near,
    )
