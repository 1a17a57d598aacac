"""Scenario loading, population generation and multi-stage planning.

A scenario is a JSON file naming the road network, grid case, candidate
sites, choice coefficients, LMPs and placement costs (paths relative to the
scenario file; the grid may also be a bundled case name), plus the EV
penetration schedule and game/QoS settings.

Seeds are split from the master seed by label (see :mod:`chargesite.rng`):
``("stage", t, "population")`` for agents, ``("stage", t, "qos")`` for the
QoS replications and ``("stage", t, "game")`` for rival sampling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .demand import DEFAULT_LEVELS, N_PROVIDERS, ChoiceCoefficients, EvAgent, LevelAttributes, build_choice_context
from .errors import ChargeSiteError, ConfigError, Infeasible
from .placement import GameConfig, Market, MarketEvaluator, play_stage
from .power_grid import BUNDLED_CASES, load_case
from .qos import QosConfig, simulate_qos
from .road_network import load_network
from .rng import derive_rng

log = logging.getLogger(__name__)

BUNDLED_SCENARIOS = ("city40",)


@dataclass
class Candidate:
    id: str
    node: object
    bus: int
    levels: tuple = (1, 2, 3)
    restaurant: bool = False
    shopping: bool = False
    supermarket: bool = False


@dataclass
class ScenarioConfig:
    root: Path
    raw: dict
    network_file: str
    grid: str
    candidates_file: str
    coefficients_file: str
    lmp_file: str
    costs_file: str
    stages: list
    seed: int = 0
    output_dir: str = "out"
    income_mean: float = 60.0
    income_std: float = 15.0
    origin_weights: dict | None = None
    destination_weights: dict | None = None
    game: dict = field(default_factory=dict)
    qos: dict = field(default_factory=dict)
    heatmap: dict = field(default_factory=lambda: {"nx": 10, "ny": 10})
    levels: tuple = DEFAULT_LEVELS

    def path(self, name: str) -> Path:
        return self.root / name


def _bundled_scenario_dir() -> Path:
    return Path(str(resources.files("chargesite.data").joinpath("city40")))


def load_scenario(path: str | Path, seed: int | None = None, samples: int | None = None, output_dir=None) -> ScenarioConfig:
    """Parse and validate a scenario file (or the bundled name ``"city40"``)."""
    if str(path) in BUNDLED_SCENARIOS:
        path = _bundled_scenario_dir() / "scenario.json"
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"scenario {path} is not valid JSON: {exc}") from exc
    if seed is not None:
        raw["seed"] = int(seed)
    if samples is not None:
        raw.setdefault("game", {})["samples"] = int(samples)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    try:
        pop = raw.get("population", {})
        levels = tuple(LevelAttributes(**lv) for lv in raw["levels"]) if "levels" in raw else DEFAULT_LEVELS
        cfg = ScenarioConfig(
            root=path.parent,
            raw=raw,
            network_file=raw["network"],
            grid=raw["grid"],
            candidates_file=raw["candidates"],
            coefficients_file=raw["coefficients"],
            lmp_file=raw["lmp"],
            costs_file=raw["costs"],
            stages=[int(s) for s in raw["stages"]],
            seed=int(raw.get("seed", 0)),
            output_dir=str(raw.get("output_dir", "out")),
            income_mean=float(pop.get("income_mean", 60.0)),
            income_std=float(pop.get("income_std", 15.0)),
            origin_weights=pop.get("origin_weights"),
            destination_weights=pop.get("destination_weights"),
            game=dict(raw.get("game", {})),
            qos=dict(raw.get("qos", {})),
            heatmap=dict(raw.get("heatmap", {"nx": 10, "ny": 10})),
            levels=levels,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario {path}: {exc!r}") from exc
    if any(b <= a for a, b in zip(cfg.stages, cfg.stages[1:])) or any(s < 0 for s in cfg.stages):
        raise ConfigError("stage EV counts must be non-negative and strictly increasing")
    if cfg.income_mean <= 0 or cfg.income_std < 0:
        raise ConfigError("income distribution needs mean > 0 and std >= 0")
    for name in (cfg.network_file, cfg.candidates_file, cfg.coefficients_file, cfg.lmp_file, cfg.costs_file):
        if not cfg.path(name).is_file():
            raise ConfigError(f"referenced file not found: {cfg.path(name)}")
    if cfg.grid not in BUNDLED_CASES and not cfg.path(cfg.grid).is_file():
        raise ConfigError(f"grid case not found: {cfg.grid}")
    return cfg


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


@dataclass
class ScenarioData:
    """Inputs that stay fixed across stages."""

    cfg: ScenarioConfig
    net: object
    grid: object
    candidates: list
    coeffs: ChoiceCoefficients
    lmp: np.ndarray  # (L,)
    theta: np.ndarray  # (3, L)
    allowed: np.ndarray  # (3, L)

    @property
    def site_nodes(self) -> list:
        return [c.node for c in self.candidates]

    @property
    def amenities(self) -> np.ndarray:
        return np.array([[c.restaurant, c.shopping, c.supermarket] for c in self.candidates], dtype=float)


def load_data(cfg: ScenarioConfig) -> ScenarioData:
    net = load_network(cfg.path(cfg.network_file))
    grid = load_case(cfg.grid if cfg.grid in BUNDLED_CASES else cfg.path(cfg.grid))
    raw_cands = _read_json(cfg.path(cfg.candidates_file))
    raw_cands = raw_cands.get("candidates", raw_cands) if isinstance(raw_cands, dict) else raw_cands
    candidates = []
    try:
        for c in raw_cands:
            node = c["node"]
            if node not in net.nodes:
                raise ConfigError(f"candidate {c['id']} on unknown road node {node!r}")
            road = net.nodes[node]
            candidates.append(Candidate(
                id=str(c["id"]), node=node, bus=int(c["bus"]), levels=tuple(c.get("levels", (1, 2, 3))),
                restaurant=bool(c.get("restaurant", road.restaurant)),
                shopping=bool(c.get("shopping", road.shopping)),
                supermarket=bool(c.get("supermarket", road.supermarket)),
            ))
            grid.index(int(c["bus"]))
        coeffs = ChoiceCoefficients.from_dict(_read_json(cfg.path(cfg.coefficients_file)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid candidate or coefficient data: {exc!r}") from exc
    if not candidates:
        raise ConfigError("no candidate sites")

    lmp_raw = _read_json(cfg.path(cfg.lmp_file))
    lmp_raw = lmp_raw.get("prices", lmp_raw)
    try:
        lmp = np.array([float(lmp_raw[str(c.bus)]) for c in candidates])
    except KeyError as exc:
        raise ConfigError(f"no LMP for bus {exc}") from exc

    costs_raw = _read_json(cfg.path(cfg.costs_file))
    by_id = {str(row["candidate"]): row["theta"] for row in costs_raw.get("costs", [])}
    try:
        theta = np.array([[float(by_id[c.id][k]) for c in candidates] for k in range(N_PROVIDERS)])
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"placement costs missing for candidate {exc}") from exc
    allowed = np.array([[k + 1 in c.levels for c in candidates] for k in range(N_PROVIDERS)])
    return ScenarioData(cfg, net, grid, candidates, coeffs, lmp, theta, allowed)


def _weights(nodes, spec):
    if spec is None:
        return np.full(len(nodes), 1.0 / len(nodes))
    w = np.array([float(spec.get(str(n), 0.0)) for n in nodes])
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("node sampling weights must be non-negative with a positive sum")
    return w / w.sum()


def generate_population(cfg: ScenarioConfig, stage: int, seed: int | None = None, data: ScenarioData | None = None) -> list[EvAgent]:
    """Draw the EV owners of one stage (0-based index into the schedule).

    Incomes are log-normal with the configured mean and standard deviation,
    trip ends are sampled by node weight, and each agent's kWh demand is
    uniform on [q_a, q_b].
    """
    if cfg.income_mean <= 0 or cfg.income_std < 0:
        raise ConfigError("income distribution needs mean > 0 and std >= 0")
    data = data or load_data(cfg)
    count = cfg.stages[stage]
    rng = derive_rng(cfg.seed if seed is None else seed, "stage", stage, "population")
    nodes = data.net.node_ids()
    if cfg.income_std == 0:
        income = np.full(count, cfg.income_mean)
    else:
        s2 = math.log1p((cfg.income_std / cfg.income_mean) ** 2)
        income = rng.lognormal(math.log(cfg.income_mean) - 0.5 * s2, math.sqrt(s2), count)
    origins = rng.choice(len(nodes), size=count, p=_weights(nodes, cfg.origin_weights))
    dests = rng.choice(len(nodes), size=count, p=_weights(nodes, cfg.destination_weights))
    demand = rng.uniform(data.coeffs.q_a, data.coeffs.q_b, count)
    return [
        EvAgent(id=i, income=float(income[i]), origin=nodes[origins[i]], dest=nodes[dests[i]], demand=float(demand[i]))
        for i in range(count)
    ]


def game_config(cfg: ScenarioConfig, data: ScenarioData) -> GameConfig:
    g = cfg.game
    try:
        return GameConfig(
            theta=data.theta,
            w=float(g.get("w", 0.0)),
            rho=float(g.get("rho", 0.5)),
            n_samples=int(g.get("samples", 32)),
            upsilon0=float(g.get("upsilon0", 1.0)),
            xi0=float(g.get("xi0", 0.0)),
            coverage_at_least=bool(g.get("coverage_at_least", True)),
            per_unit_impact=bool(g.get("per_unit_impact", False)),
            mw_per_kwh=float(g.get("mw_per_kwh", 1e-3)),
            power_factor=float(g.get("power_factor", 0.98)),
            fixed_point=bool(g.get("fixed_point", False)),
            max_rounds=int(g.get("max_rounds", 10)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid game settings: {exc}") from exc


def qos_config(cfg: ScenarioConfig, stage: int) -> QosConfig:
    q = cfg.qos
    seed = int(derive_rng(cfg.seed, "stage", stage, "qos").integers(0, 2**63 - 1))
    try:
        return QosConfig(
            replications=int(q.get("replications", 10)),
            capacity=int(q.get("capacity", 4)),
            radius=q.get("radius"),
            speed_kmh=float(q.get("speed_kmh", 40.0)),
            horizon_h=float(q.get("horizon_h", 24.0)),
            seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid QoS settings: {exc}") from exc


def build_market(cfg: ScenarioConfig, data: ScenarioData, agents, stage: int) -> Market:
    choice = build_choice_context(data.net, data.site_nodes, data.amenities, data.coeffs, agents, cfg.levels)
    return Market(
        choice=choice,
        lmp=data.lmp,
        site_buses=[c.bus for c in data.candidates],
        grid=data.grid,
        allowed=data.allowed,
        net=data.net,
        agents=agents,
        site_nodes=data.site_nodes,
        qos=qos_config(cfg, stage),
    )


def traversal_heatmap(net, routes, nx: int = 10, ny: int = 10) -> np.ndarray:
    """Count route-node visits per cell of a uniform grid over the network's bounding box.

    Returns an ``(ny, nx)`` integer array (row = y cell, column = x cell).
    """
    x0, y0, x1, y1 = net.bounding_box()
    counts = np.zeros((ny, nx), dtype=int)
    wx = (x1 - x0) / nx or 1.0
    wy = (y1 - y0) / ny or 1.0
    for route in routes:
        for v in route:
            node = net.nodes[v]
            ix = min(int((node.x - x0) / wx), nx - 1)
            iy = min(int((node.y - y0) / wy), ny - 1)
            counts[iy, ix] += 1
    return counts


def heatmap_csv(net, counts: np.ndarray) -> str:
    x0, y0, x1, y1 = net.bounding_box()
    ny, nx = counts.shape
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ix", "iy", "x_min", "x_max", "y_min", "y_max", "count"])
    for iy in range(ny):
        for ix in range(nx):
            writer.writerow([
                ix, iy,
                _fmt(x0 + (x1 - x0) * ix / nx), _fmt(x0 + (x1 - x0) * (ix + 1) / nx),
                _fmt(y0 + (y1 - y0) * iy / ny), _fmt(y0 + (y1 - y0) * (iy + 1) / ny),
                int(counts[iy, ix]),
            ])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(round(float(x), 9))


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 over the resolved scenario and the bytes of every referenced file.

    The output directory is left out: where reports go does not change them.
    """
    h = hashlib.sha256()
    inputs = {k: v for k, v in cfg.raw.items() if k != "output_dir"}
    h.update(json.dumps(inputs, sort_keys=True).encode())
    for name in (cfg.network_file, cfg.candidates_file, cfg.coefficients_file, cfg.lmp_file, cfg.costs_file):
        h.update(cfg.path(name).read_bytes())
    if cfg.grid in BUNDLED_CASES:
        h.update(resources.files("chargesite.data").joinpath(f"{cfg.grid}.json").read_bytes())
    else:
        h.update(cfg.path(cfg.grid).read_bytes())
    return h.hexdigest()


@dataclass
class StageReport:
    stage: int
    ev_count: int
    policies: np.ndarray  # (3, L) cumulative placements
    added: np.ndarray  # (3, L) stations new in this stage
    prices: np.ndarray
    demand: np.ndarray  # psi (L, 3)
    delay: np.ndarray  # (3,)
    coverage: np.ndarray
    impact: float  # market-wide B at the realised placements
    provider_impact: np.ndarray  # (3,) marginal B per provider
    expected_utility: np.ndarray  # (3,) of the chosen policies
    heatmap: np.ndarray
    config_hash: str = ""
    site_ids: list = field(default_factory=list)

    @property
    def station_counts(self) -> list[int]:
        return [int(x) for x in self.policies.sum(axis=1)]

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return None if not math.isfinite(x) else x

        return {
            "stage": self.stage,
            "ev_count": self.ev_count,
            "config_hash": self.config_hash,
            "sites": self.site_ids,
            "providers": [
                {
                    "provider": k + 1,
                    "policy": self.policies[k].astype(int).tolist(),
                    "added": self.added[k].astype(int).tolist(),
                    "stations": self.station_counts[k],
                    "price": num(self.prices[k]),
                    "demand_kwh": [num(x) for x in self.demand[:, k]],
                    "delay_probability": num(self.delay[k]),
                    "coverage": num(self.coverage[k]),
                    "impact": num(self.provider_impact[k]),
                    "expected_utility": num(self.expected_utility[k]),
                }
                for k in range(N_PROVIDERS)
            ],
            "cumulative_stations": sum(self.station_counts),
            "impact": num(self.impact),
            "heatmap": self.heatmap.tolist(),
        }


def _stage_report(cfg, data, market, stage, policies, previous, responses, gcfg, digest) -> StageReport:
    evaluator = MarketEvaluator(market, gcfg)
    outcome = evaluator.outcome(policies)
    phi, outside = market.choice.probabilities(outcome.prices, policies)
    if market.agents:
        qos = simulate_qos(market.agents, market.net, market.site_nodes, policies, phi, outside,
                           market.qos, market.choice.levels, market.choice.coeffs.d_th, market.geometry)
        routes = market.geometry.routes
    else:
        qos, routes = [], []
    provider_impact = np.array([evaluator.provider_terms(policies, k)[1] for k in range(N_PROVIDERS)])
    eu = np.array([r.evaluation.expected_utility[r.index] if r is not None else np.nan for r in responses])
    hm = cfg.heatmap
    return StageReport(
        stage=stage + 1,
        ev_count=cfg.stages[stage],
        policies=policies.copy(),
        added=policies & ~previous,
        prices=outcome.prices,
        demand=outcome.demand,
        delay=np.array([q.delay_probability for q in qos]) if qos else np.zeros(N_PROVIDERS),
        coverage=np.array([q.coverage for q in qos]) if qos else np.zeros(N_PROVIDERS),
        impact=outcome.impact,
        provider_impact=provider_impact,
        expected_utility=eu,
        heatmap=traversal_heatmap(data.net, routes, int(hm.get("nx", 10)), int(hm.get("ny", 10))),
        config_hash=digest,
        site_ids=[c.id for c in data.candidates],
    )


def write_report(report: StageReport, out_dir: Path, net) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"stage_{report.stage:02d}.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / f"heatmap_stage_{report.stage:02d}.csv").write_text(heatmap_csv(net, report.heatmap))


def summary_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "ev_count", "provider", "stations", "added", "price", "delay_probability", "coverage", "impact", "expected_utility"])
    for r in reports:
        d = r.to_dict()
        for p in d["providers"]:
            writer.writerow([r.stage, r.ev_count, p["provider"], p["stations"], sum(p["added"]),
                             p["price"], p["delay_probability"], p["coverage"], p["impact"], p["expected_utility"]])
    return buf.getvalue()


def run_multistage(cfg: ScenarioConfig, out_dir: str | Path | None = None, fmt: str = "json") -> list[StageReport]:
    """Play the placement game stage by stage, locking earlier placements.

    Reports are written after every stage, so an infeasible stage leaves the
    earlier reports on disk; the :class:`Infeasible` error carries the stage
    number.
    """
    data = load_data(cfg)
    gcfg = game_config(cfg, data)
    digest = config_hash(cfg)
    out = Path(out_dir) if out_dir is not None else None
    locked = np.zeros((N_PROVIDERS, len(data.candidates)), dtype=bool)
    reports: list[StageReport] = []
    for stage in range(len(cfg.stages)):
        agents = generate_population(cfg, stage, data=data)
        market = build_market(cfg, data, agents, stage)
        game_seed = int(derive_rng(cfg.seed, "stage", stage, "game").integers(0, 2**63 - 1))
        log.info("stage %d: %d EVs", stage + 1, len(agents))
        try:
            policies, responses = play_stage(gcfg, market, locked, game_seed)
        except Infeasible as exc:
            exc.stage = stage + 1
            exc.args = (f"stage {stage + 1}: {exc.args[0]}",)
            if out is not None:
                _write_summary(out, reports, fmt)
            raise
        report = _stage_report(cfg, data, market, stage, policies, locked, responses, gcfg, digest)
        reports.append(report)
        if out is not None:
            write_report(report, out, data.net)
        locked = policies
    if out is not None:
        _write_summary(out, reports, fmt)
    return reports


def _write_summary(out: Path, reports, fmt: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        (out / "summary.csv").write_text(summary_csv(reports))
    else:
        payload = {"stages": [r.to_dict() for r in reports]}
        (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


__all__ = [
    "Candidate", "ScenarioConfig", "ScenarioData", "StageReport", "load_scenario", "load_data",
    "generate_population", "game_config", "qos_config", "build_market", "traversal_heatmap",
    "heatmap_csv", "config_hash", "run_multistage", "summary_csv", "ChargeSiteError",
]
