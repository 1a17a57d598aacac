"""Small synthetic markets shared by several test modules."""

from __future__ import annotations

import numpy as np

from chargesite.demand import ChoiceCoefficients, ChoiceContext, EvAgent, build_choice_context
from chargesite.placement import GameConfig, Market
from chargesite.power_grid import load_case
from chargesite.road_network import Node, RoadNetwork

PQ_BUSES_14 = (4, 5, 9, 10, 11, 12, 13, 14)


def grid_network(nx=4, ny=3, spacing=1.0, rng=None):
    rng = rng or np.random.default_rng(0)
    nodes = [
        Node(iy * nx + ix, ix * spacing, iy * spacing, bool(rng.random() < 0.4), bool(rng.random() < 0.3), bool(rng.random() < 0.3))
        for iy in range(ny) for ix in range(nx)
    ]
    edges = []
    for iy in range(ny):
        for ix in range(nx):
            a = iy * nx + ix
            if ix < nx - 1:
                edges.append((a, a + 1, spacing * rng.uniform(1.0, 1.3)))
            if iy < ny - 1:
                edges.append((a, a + nx, spacing * rng.uniform(1.0, 1.3)))
    return RoadNetwork.from_lists(nodes, edges)


def random_coeffs(rng, beta=-200.0):
    return ChoiceCoefficients(
        alpha=float(rng.uniform(0.5, 2.0)),
        beta=beta,
        sigma=rng.uniform(0.3, 1.0, 3),
        mu=-rng.uniform(0.2, 1.0, 3),
        eta=rng.uniform(0.0, 0.5, 3),
        gamma=rng.uniform(0.0, 0.4, 3),
        lam=rng.uniform(0.0, 0.4, 3),
        delta=rng.uniform(0.0, 0.4, 3),
    )


def random_agents(net, n, rng, coeffs):
    ids = net.node_ids()
    return [
        EvAgent(i, float(rng.uniform(40, 80)), ids[rng.integers(len(ids))], ids[rng.integers(len(ids))],
                float(rng.uniform(coeffs.q_a, coeffs.q_b)))
        for i in range(n)
    ]


def random_context(rng, n_agents=30, n_sites=3, beta=-200.0):
    net = grid_network(rng=rng)
    coeffs = random_coeffs(rng, beta)
    agents = random_agents(net, n_agents, rng, coeffs)
    sites = list(rng.choice(net.node_ids(), size=n_sites, replace=False))
    amen = (rng.random((n_sites, 3)) < 0.5).astype(float)
    return build_choice_context(net, sites, amen, coeffs, agents), net, agents, sites


def synthetic_context(station_util, income, demand, coeffs):
    """ChoiceContext from raw arrays, bypassing the road network."""
    return ChoiceContext(coeffs=coeffs, income=np.asarray(income, float), demand=np.asarray(demand, float),
                         station_util=np.asarray(station_util, float))


def random_market(rng, n_sites=2, n_agents=25, with_grid=True, w=0.5, n_samples=64, theta_scale=5.0):
    ctx, net, agents, sites = random_context(rng, n_agents, n_sites)
    lmp = rng.uniform(0.05, 0.15, n_sites)
    grid = load_case("ieee14") if with_grid else None
    buses = list(rng.choice(PQ_BUSES_14, size=n_sites)) if with_grid else None
    market = Market(choice=ctx, lmp=lmp, site_buses=buses, grid=grid)
    cfg = GameConfig(theta=rng.uniform(0.5, 1.5, (3, n_sites)) * theta_scale, w=w, n_samples=n_samples,
                     mw_per_kwh=0.01)
    return market, cfg
