"""Bayesian placement game among the three charging-service providers.

A provider does not know its rivals' placements. It treats each of the 2L
rival placement indicators as an independent Bernoulli(rho) draw (so the
number of rival stations is Binomial(2L, rho)), evaluates every one of its
own 2^L policies against those draws, and keeps the QoS-feasible policy
with the highest expected utility

    E[U] = E[R] - theta . S - w * B.

Rival placements from earlier stages are never removed: sampled rival
policies are OR-ed with the rivals' locked stations.

The grid impact B charged to a provider is its marginal contribution to the
market-wide impact: B(all providers' load) - B(load with the provider's
stations removed and prices re-solved). A provider with no stations
therefore bears no impact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .demand import N_PROVIDERS, ChoiceContext
from .errors import DomainError, Infeasible, SampleFailure, SolverError
from .power_grid import PowerFlowSolution, PowerSystem, dispatch_with_ev, impact_metric, solve_power_flow
from .pricing import lmp_table, provider_profit, solve_bertrand
from .qos import QosConfig, QosEstimate, TripGeometry, simulate_qos
from .road_network import RoadNetwork
from .rng import derive_rng


@dataclass
class GameConfig:
    theta: np.ndarray  # (3, L) placement cost per provider and site
    w: float = 0.0
    rho: float = 0.5
    n_samples: int = 32
    upsilon0: float = 1.0
    xi0: float = 0.0
    coverage_at_least: bool = True  # False applies the literal Xi <= Xi0
    per_unit_impact: bool = False
    mw_per_kwh: float = 1e-3
    power_factor: float = 0.98
    max_failure_rate: float = 0.1
    fixed_point: bool = False
    max_rounds: int = 10

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if self.theta.shape[0] != N_PROVIDERS:
            raise DomainError("theta needs one row per provider")
        if np.any(self.theta <= 0):
            raise DomainError("placement costs must be positive")
        if not 0 < self.rho < 1:
            raise DomainError("rho must lie in (0, 1)")
        if self.w < 0:
            raise DomainError("impact weight w must be non-negative")
        if self.n_samples < 1:
            raise DomainError("need at least one opponent sample")

    @property
    def n_sites(self) -> int:
        return self.theta.shape[1]


@dataclass
class Market:
    """Immutable inputs of the game at one stage."""

    choice: ChoiceContext
    lmp: np.ndarray  # (L,) or (L, 3) wholesale price per kWh
    site_buses: list | None = None  # grid bus per site; None disables the impact term
    grid: PowerSystem | None = None
    allowed: np.ndarray | None = None  # (3, L) sites each provider may use
    net: RoadNetwork | None = None
    agents: list | None = None
    site_nodes: list | None = None
    qos: QosConfig | None = None  # None skips QoS simulation (always feasible)
    geometry: TripGeometry | None = None
    _base_flow: PowerFlowSolution | None = field(default=None, repr=False)

    def __post_init__(self):
        n_sites = self.choice.n_sites
        self.lmp = lmp_table(self.lmp, n_sites)
        if self.allowed is None:
            self.allowed = np.ones((N_PROVIDERS, n_sites), dtype=bool)
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.qos is not None and self.geometry is None and self.agents:
            self.geometry = TripGeometry.build(self.net, self.agents, self.site_nodes)

    @property
    def n_sites(self) -> int:
        return self.choice.n_sites

    def base_flow(self) -> PowerFlowSolution:
        if self._base_flow is None:
            self._base_flow = solve_power_flow(self.grid)
        return self._base_flow


@dataclass
class MarketOutcome:
    prices: np.ndarray
    revenue: np.ndarray  # (3,)
    demand: np.ndarray  # psi, (L, 3)
    impact: float  # market-wide B
    ev_load_mw: np.ndarray | None = None


class MarketEvaluator:
    """Evaluates (and memoises) equilibrium outcomes of placement triples."""

    def __init__(self, market: Market, cfg: GameConfig):
        self.market = market
        self.cfg = cfg
        self._cache: dict = {}

    def outcome(self, policies) -> MarketOutcome:
        policies = np.asarray(policies, dtype=bool)
        key = policies.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            try:
                hit = self._solve(policies)
            except SolverError as exc:
                hit = exc
            self._cache[key] = hit
        if isinstance(hit, Exception):
            raise hit
        return hit

    def _solve(self, policies) -> MarketOutcome:
        m = self.market
        price = solve_bertrand(m.choice, policies, m.lmp)
        _, revenue = provider_profit(m.choice, policies, price.prices, m.lmp)
        phi, _ = m.choice.probabilities(price.prices, policies)
        psi = np.tensordot(m.choice.demand, phi, axes=(0, 0)) * policies.T
        impact, load = self._impact(psi)
        return MarketOutcome(price.prices, revenue, psi, impact, load)

    def _impact(self, psi) -> tuple[float, np.ndarray | None]:
        m = self.market
        if m.grid is None or m.site_buses is None:
            return 0.0, None
        load = {}
        site_kwh = psi.sum(axis=1)
        for bus, kwh in zip(m.site_buses, site_kwh):
            load[bus] = load.get(bus, 0.0) + kwh * self.cfg.mw_per_kwh
        base, ev = dispatch_with_ev(m.grid, load, self.cfg.power_factor, base=m.base_flow())
        result = impact_metric(base, ev, per_unit=self.cfg.per_unit_impact, base_mva=m.grid.base_mva)
        return result.value, np.array([load[b] for b in m.site_buses])

    def provider_terms(self, policies, provider: int) -> tuple[float, float]:
        """Revenue and marginal grid impact of one provider in a market state."""
        if not np.asarray(policies)[provider].any():
            return 0.0, 0.0
        full = self.outcome(policies)
        without = np.array(policies, dtype=bool)
        without[provider] = False
        rest = self.outcome(without)
        return float(full.revenue[provider]), full.impact - rest.impact


@dataclass
class StrategyEntry:
    policy: np.ndarray
    expected_revenue: float
    impact: float
    expected_utility: float
    utility_se: float = 0.0
    failed_samples: int = 0
    qos: QosEstimate | None = None
    feasible: bool = True


@dataclass
class StrategyEvaluation:
    provider: int
    policies: np.ndarray  # (P, L)
    expected_revenue: np.ndarray
    impact: np.ndarray
    expected_utility: np.ndarray
    utility_se: np.ndarray
    feasible: np.ndarray
    delay: np.ndarray
    coverage: np.ndarray

    @classmethod
    def from_entries(cls, provider, entries):
        nan = float("nan")
        return cls(
            provider=provider,
            policies=np.array([e.policy for e in entries], dtype=bool),
            expected_revenue=np.array([e.expected_revenue for e in entries]),
            impact=np.array([e.impact for e in entries]),
            expected_utility=np.array([e.expected_utility for e in entries]),
            utility_se=np.array([e.utility_se for e in entries]),
            feasible=np.array([e.feasible for e in entries], dtype=bool),
            delay=np.array([e.qos.delay_probability if e.qos else nan for e in entries]),
            coverage=np.array([e.qos.coverage if e.qos else nan for e in entries]),
        )

    def utilities(self, theta, w) -> np.ndarray:
        return self.expected_revenue - self.policies @ np.asarray(theta, dtype=float) - w * self.impact


def all_policies(n_sites: int, locked=None, allowed=None) -> np.ndarray:
    """Every 0/1 policy of length L containing ``locked`` and inside ``allowed``.

    Ordered by binary value with site 0 as the most significant bit.
    """
    pols = np.array(list(itertools.product((0, 1), repeat=n_sites)), dtype=bool).reshape(-1, n_sites)
    keep = np.ones(len(pols), dtype=bool)
    if locked is not None:
        keep &= np.all(pols >= np.asarray(locked, dtype=bool), axis=1)
    if allowed is not None:
        keep &= np.all(pols <= np.asarray(allowed, dtype=bool), axis=1)
    return pols[keep]


def _rivals(provider):
    return [k for k in range(N_PROVIDERS) if k != provider]


def _state(provider, policy, rival_rows, rivals):
    state = np.zeros((N_PROVIDERS, len(policy)), dtype=bool)
    state[provider] = policy
    state[rivals[0]] = rival_rows[0]
    state[rivals[1]] = rival_rows[1]
    return state


def opponent_samples(provider, cfg: GameConfig, market: Market, locked, seed) -> np.ndarray:
    """Draw rival placement pairs, shape ``(n_samples, 2, L)``."""
    rivals = _rivals(provider)
    rng = derive_rng(seed, "opponents", provider)
    draws = rng.random((cfg.n_samples, 2, market.n_sites)) < cfg.rho
    locked = np.zeros((N_PROVIDERS, market.n_sites), dtype=bool) if locked is None else np.asarray(locked, dtype=bool)
    return (draws | locked[rivals][None]) & market.allowed[rivals][None]


def expected_utility(
    policy,
    provider: int,
    cfg: GameConfig,
    market: Market,
    seed: int = 0,
    locked=None,
    evaluator: MarketEvaluator | None = None,
    samples: np.ndarray | None = None,
) -> StrategyEntry:
    """Monte-Carlo expected utility of one policy against sampled rivals.

    Samples whose price or power-flow solve fails are dropped; more than
    ``cfg.max_failure_rate`` of failures raises :class:`SampleFailure`.
    """
    policy = np.asarray(policy, dtype=bool)
    evaluator = evaluator or MarketEvaluator(market, cfg)
    if samples is None:
        samples = opponent_samples(provider, cfg, market, locked, seed)
    rivals = _rivals(provider)
    cost = float(cfg.theta[provider] @ policy)
    rev, imp, failed = [], [], 0
    for pair in samples:
        try:
            r, b = evaluator.provider_terms(_state(provider, policy, pair, rivals), provider)
        except SolverError:
            failed += 1
            continue
        rev.append(r)
        imp.append(b)
    if failed > cfg.max_failure_rate * len(samples):
        raise SampleFailure(f"{failed} of {len(samples)} opponent samples failed")
    rev, imp = np.array(rev), np.array(imp)
    util = rev - cost - cfg.w * imp
    se = float(util.std(ddof=1) / np.sqrt(len(util))) if len(util) > 1 else 0.0
    return StrategyEntry(policy, float(rev.mean()), float(imp.mean()), float(rev.mean() - cost - cfg.w * imp.mean()), se, failed)


def exact_expected_utility(
    policy,
    provider: int,
    cfg: GameConfig,
    market: Market,
    locked=None,
    evaluator: MarketEvaluator | None = None,
) -> StrategyEntry:
    """Expected utility by enumerating all 2^(2L) rival indicator combinations."""
    policy = np.asarray(policy, dtype=bool)
    evaluator = evaluator or MarketEvaluator(market, cfg)
    n_sites = market.n_sites
    rivals = _rivals(provider)
    locked = np.zeros((N_PROVIDERS, n_sites), dtype=bool) if locked is None else np.asarray(locked, dtype=bool)
    cost = float(cfg.theta[provider] @ policy)
    exp_rev = exp_imp = 0.0
    for bits in itertools.product((False, True), repeat=2 * n_sites):
        draw = np.array(bits).reshape(2, n_sites)
        ones = int(draw.sum())
        weight = cfg.rho**ones * (1 - cfg.rho) ** (2 * n_sites - ones)
        pair = (draw | locked[rivals]) & market.allowed[rivals]
        r, b = evaluator.provider_terms(_state(provider, policy, pair, rivals), provider)
        exp_rev += weight * r
        exp_imp += weight * b
    return StrategyEntry(policy, exp_rev, exp_imp, exp_rev - cost - cfg.w * exp_imp)


def policy_qos(policy, provider: int, market: Market, locked, cfg: GameConfig) -> QosEstimate | None:
    """QoS of ``provider`` playing ``policy`` against the rivals' locked stations."""
    if market.qos is None:
        return None
    state = np.zeros((N_PROVIDERS, market.n_sites), dtype=bool) if locked is None else np.array(locked, dtype=bool)
    state[provider] = policy
    price = solve_bertrand(market.choice, state, market.lmp)
    phi, outside = market.choice.probabilities(price.prices, state)
    est = simulate_qos(
        market.agents, market.net, market.site_nodes, state, phi, outside,
        market.qos, market.choice.levels, market.choice.coeffs.d_th, market.geometry,
    )
    return est[provider]


def qos_violation(est: QosEstimate | None, cfg: GameConfig) -> float:
    if est is None:
        return 0.0
    delay = max(est.delay_probability - cfg.upsilon0, 0.0)
    if cfg.coverage_at_least:
        cover = max(cfg.xi0 - est.coverage, 0.0)
    else:
        cover = max(est.coverage - cfg.xi0, 0.0)
    return delay + cover


def evaluate_strategies(
    provider: int,
    cfg: GameConfig,
    market: Market,
    locked=None,
    seed: int = 0,
    evaluator: MarketEvaluator | None = None,
    with_qos: bool = True,
) -> StrategyEvaluation:
    """Evaluate every policy consistent with the provider's locked stations.

    All policies face the same rival samples (common random numbers), so
    differences between policies are not blurred by sampling noise.
    """
    evaluator = evaluator or MarketEvaluator(market, cfg)
    own_locked = None if locked is None else np.asarray(locked, dtype=bool)[provider]
    samples = opponent_samples(provider, cfg, market, locked, seed)
    entries = []
    for policy in all_policies(market.n_sites, own_locked, market.allowed[provider]):
        entry = expected_utility(policy, provider, cfg, market, seed, locked, evaluator, samples)
        if with_qos:
            entry.qos = policy_qos(policy, provider, market, locked, cfg)
            entry.feasible = qos_violation(entry.qos, cfg) == 0.0
        entries.append(entry)
    return StrategyEvaluation.from_entries(provider, entries)


@dataclass
class BestResponse:
    policy: np.ndarray
    index: int
    evaluation: StrategyEvaluation


def select_policy(evals: StrategyEvaluation) -> int:
    """Feasible argmax of expected utility; ties go to fewer stations, then lexicographic order."""
    feasible = np.flatnonzero(evals.feasible)
    if feasible.size == 0:
        raise Infeasible("no placement policy satisfies the QoS constraints")
    return min(
        feasible,
        key=lambda i: (-evals.expected_utility[i], int(evals.policies[i].sum()), tuple(evals.policies[i].astype(int))),
    )


def best_response(
    provider: int,
    cfg: GameConfig,
    market: Market,
    locked=None,
    seed: int = 0,
    evaluator: MarketEvaluator | None = None,
) -> BestResponse:
    evals = evaluate_strategies(provider, cfg, market, locked, seed, evaluator)
    try:
        i = select_policy(evals)
    except Infeasible:
        violations = []
        for n in range(len(evals.policies)):
            est = QosEstimate(evals.delay[n], evals.coverage[n], 0, 0)
            violations.append(qos_violation(est, cfg))
        near = int(np.argmin(violations))
        raise Infeasible(
            f"provider {provider + 1}: no policy meets the QoS constraints; nearest "
            f"{evals.policies[near].astype(int).tolist()} (delay {evals.delay[near]:.4f}, "
            f"coverage {evals.coverage[near]:.4f})",
            nearest=evals.policies[near].copy(),
            violation=violations[near],
        ) from None
    return BestResponse(evals.policies[i].copy(), int(i), evals)


def play_stage(cfg: GameConfig, market: Market, locked=None, seed: int = 0) -> tuple[np.ndarray, list[BestResponse]]:
    """Sequential best responses 1 -> 2 -> 3, optionally iterated to a fixed point."""
    current = np.zeros((N_PROVIDERS, market.n_sites), dtype=bool) if locked is None else np.array(locked, dtype=bool)
    evaluator = MarketEvaluator(market, cfg)
    responses = [None] * N_PROVIDERS
    rounds = cfg.max_rounds if cfg.fixed_point else 1
    for rnd in range(rounds):
        changed = False
        for k in range(N_PROVIDERS):
            br = best_response(k, cfg, market, current, derive_seed_int(seed, rnd, k), evaluator)
            responses[k] = br
            if not np.array_equal(br.policy, current[k]):
                changed = True
            current[k] = br.policy
        if not changed:
            break
    return current, responses


def derive_seed_int(seed: int, *labels) -> int:
    return int(derive_rng(seed, *labels).integers(0, 2**63 - 1))


def hypervolume_contains(theta, l: int, evals: StrategyEvaluation, w: float) -> bool:
    """Whether the cost vector ``theta`` lies in the region where strategy ``l`` is optimal.

    True iff for every other strategy j
    theta.(S_j - S_l) - (ER_j - ER_l) + w (B_j - B_l) > 0.
    """
    theta = np.asarray(theta, dtype=float)
    pol = evals.policies.astype(float)
    lhs = (pol - pol[l]) @ theta - (evals.expected_revenue - evals.expected_revenue[l]) + w * (evals.impact - evals.impact[l])
    others = np.arange(len(pol)) != l
    return bool(np.all(lhs[others] > 0))


__all__ = [
    "GameConfig", "Market", "MarketEvaluator", "MarketOutcome", "StrategyEntry", "StrategyEvaluation",
    "BestResponse", "all_policies", "opponent_samples", "expected_utility", "exact_expected_utility",
    "policy_qos", "qos_violation", "evaluate_strategies", "select_policy", "best_response", "play_stage",
    "hypervolume_contains",
]
