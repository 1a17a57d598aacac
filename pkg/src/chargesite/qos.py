"""Monte-Carlo estimates of service delay probability and route coverage.

Each replication replays one trip per EV. Departure times are uniform over
the horizon; an EV picks a station (or home charging) by sampling its
nested-logit choice probabilities and arrives after driving to it. An
attempt is *delayed* when every charger at the chosen station is occupied
at the arrival instant. Delayed EVs do not queue and occupy nothing.

Coverage of an EV for provider k counts that provider's stations lying
within the accessibility radius of any node on the EV's shortest route.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import DEFAULT_LEVELS, N_PROVIDERS, EvAgent
from .road_network import RoadNetwork, shortest_path
from .rng import derive_rng


@dataclass(frozen=True)
class QosConfig:
    replications: int = 10
    capacity: int = 4  # chargers per station
    radius: float | None = None  # km; None means the choice model's d_th
    speed_kmh: float = 40.0
    horizon_h: float = 24.0
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")


@dataclass
class QosEstimate:
    delay_probability: float
    coverage: float
    attempts: int
    delayed: int
    delay_se: float = 0.0
    coverage_se: float = 0.0


def replay_occupancy(arrivals, durations, stations, capacity: int) -> np.ndarray:
    """Replay charging attempts in arrival order and flag the delayed ones.

    Ties in arrival time are processed in input order. A charger that
    frees up exactly at an arrival instant is available to that arrival.
    """
    arrivals = np.asarray(arrivals, dtype=float)
    durations = np.asarray(durations, dtype=float)
    keys = np.asarray(stations).tolist()
    order = np.argsort(arrivals, kind="stable")
    busy: dict = {}
    delayed = np.zeros(len(arrivals), dtype=bool)
    for i in order:
        chargers = busy.setdefault(keys[i], [])
        t = arrivals[i]
        chargers[:] = [end for end in chargers if end > t]
        if len(chargers) >= capacity:
            delayed[i] = True
        else:
            chargers.append(t + durations[i])
    return delayed


def session_hours(demand_kwh, levels=DEFAULT_LEVELS) -> np.ndarray:
    """Charging duration per (agent, provider): energy / rated power, capped at t_k."""
    demand_kwh = np.asarray(demand_kwh, dtype=float)
    out = np.zeros((demand_kwh.shape[0], N_PROVIDERS))
    for k, lv in enumerate(levels):
        hours = demand_kwh / lv.power_kw if lv.power_kw > 0 else np.full_like(demand_kwh, lv.charging_time)
        out[:, k] = np.minimum(hours, lv.charging_time)
    return out


@dataclass
class TripGeometry:
    """Per-(agent, site) distances reused across QoS evaluations.

    ``route_gap[n, j]`` is the distance from site j to the nearest node of
    agent n's shortest route; ``drive[n, j]`` is the distance from the
    agent's origin to site j.
    """

    route_gap: np.ndarray
    drive: np.ndarray
    routes: list

    @classmethod
    def build(cls, net: RoadNetwork, agents, site_nodes) -> "TripGeometry":
        site_nodes = list(site_nodes)
        dist_to_site = [net.distances_from(s) for s in site_nodes]
        gap = np.zeros((len(agents), len(site_nodes)))
        drive = np.zeros((len(agents), len(site_nodes)))
        routes = []
        for n, agent in enumerate(agents):
            route = shortest_path(net, agent.origin, agent.dest).nodes
            routes.append(route)
            for j, d in enumerate(dist_to_site):
                gap[n, j] = min(d.get(v, np.inf) for v in route)
                drive[n, j] = d.get(agent.origin, np.inf)
        return cls(gap, drive, routes)


def route_coverage(geometry: TripGeometry, placed, radius: float) -> np.ndarray:
    """Number of placed stations per provider accessible from each EV's route, ``(N, 3)``."""
    placed = np.asarray(placed, dtype=bool)
    reach = geometry.route_gap <= radius  # (N, L)
    return (reach[:, None, :] & placed[None, :, :]).sum(axis=2).astype(float)


def simulate_qos(
    agents: list[EvAgent],
    net: RoadNetwork,
    site_nodes,
    placed,
    phi,
    outside,
    cfg: QosConfig = QosConfig(),
    levels=DEFAULT_LEVELS,
    d_th: float = 1.0,
    geometry: TripGeometry | None = None,
) -> list[QosEstimate]:
    """Estimate delay probability and coverage for each of the three providers.

    Parameters
    ----------
    site_nodes : sequence
        Road node of every candidate site (length L).
    placed : (3, L) bool array
        Stations in place per provider.
    phi, outside : arrays
        Choice probabilities ``(N, L, 3)`` and ``(N,)`` for the same market.
    geometry : TripGeometry, optional
        Precomputed routes and distances; built on the fly when omitted.
    """
    placed = np.asarray(placed, dtype=bool)
    n, n_sites = len(agents), len(site_nodes)
    if n == 0:
        return [QosEstimate(0.0, 0.0, 0, 0) for _ in range(N_PROVIDERS)]
    radius = d_th if cfg.radius is None else cfg.radius
    if geometry is None:
        geometry = TripGeometry.build(net, agents, site_nodes)
    cover = route_coverage(geometry, placed, radius)
    results = [dict(attempts=0, delayed=0, ratios=[]) for _ in range(N_PROVIDERS)]

    phi = np.asarray(phi, dtype=float).reshape(n, n_sites * N_PROVIDERS)
    probs = np.concatenate([phi, np.asarray(outside, dtype=float).reshape(n, 1)], axis=1)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)
    durations = session_hours([a.demand for a in agents], levels)
    drive = geometry.drive

    for rep in range(cfg.replications):
        rng = derive_rng(cfg.seed, "qos", rep)
        depart = rng.uniform(0.0, cfg.horizon_h, n)
        pick = (rng.random(n)[:, None] < cum).argmax(axis=1)
        charging = pick < n_sites * N_PROVIDERS
        who = np.flatnonzero(charging)
        site, prov = np.divmod(pick[who], N_PROVIDERS)
        arrive = depart[who] + drive[who, site] / cfg.speed_kmh
        delayed = replay_occupancy(arrive, durations[who, prov], pick[who], cfg.capacity)
        for k in range(N_PROVIDERS):
            mine = prov == k
            att, dl = int(mine.sum()), int(delayed[mine].sum())
            results[k]["attempts"] += att
            results[k]["delayed"] += dl
            if att:
                results[k]["ratios"].append(dl / att)

    out = []
    for k in range(N_PROVIDERS):
        r = results[k]
        ratio = r["delayed"] / r["attempts"] if r["attempts"] else 0.0
        ratios = np.array(r["ratios"])
        se = float(ratios.std(ddof=1) / np.sqrt(len(ratios))) if len(ratios) > 1 else 0.0
        cov = cover[:, k]
        cov_se = float(cov.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        out.append(QosEstimate(ratio, float(cov.mean()), r["attempts"], r["delayed"], se, cov_se))
    return out
