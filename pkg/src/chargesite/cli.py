"""Command-line entry point.

Exit codes: 0 success, 2 infeasible QoS constraints, 3 solver failure,
4 configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .demand import N_PROVIDERS
from .errors import ChargeSiteError, ConfigError, Infeasible, SolverError
from .placement import MarketEvaluator
from .power_grid import dispatch_with_ev, impact_metric, load_case, solve_power_flow
from .pricing import foc_residual, solve_bertrand
from .qos import simulate_qos
from .scenario import build_market, game_config, generate_population, load_data, load_scenario, run_multistage

EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _emit(payload: dict, rows: list[dict], args) -> None:
    """Write ``payload`` as JSON, or ``rows`` as CSV, to ``--out`` or stdout."""
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_policy(text: str | None, allowed: np.ndarray) -> np.ndarray:
    """``"110000,011000,000001"`` -> (3, L) bool array; default: every allowed site."""
    if text is None:
        return allowed.copy()
    rows = text.split(",")
    n_sites = allowed.shape[1]
    if len(rows) != N_PROVIDERS or any(len(r) != n_sites or set(r) - {"0", "1"} for r in rows):
        raise ConfigError(f"--policy needs three comma-separated 0/1 strings of length {n_sites}")
    policy = np.array([[c == "1" for c in r] for r in rows])
    if np.any(policy & ~allowed):
        raise ConfigError("--policy places a provider on a site it may not use")
    return policy


def _stage_market(args):
    cfg = load_scenario(args.scenario, seed=args.seed, samples=getattr(args, "samples", None))
    if not 1 <= args.stage <= len(cfg.stages):
        raise ConfigError(f"--stage must lie in 1..{len(cfg.stages)}")
    data = load_data(cfg)
    agents = generate_population(cfg, args.stage - 1, data=data)
    market = build_market(cfg, data, agents, args.stage - 1)
    policy = _parse_policy(args.policy, data.allowed)
    return cfg, data, market, policy


def cmd_plan(args) -> int:
    cfg = load_scenario(args.scenario, seed=args.seed, samples=args.samples, output_dir=args.out)
    out = Path(args.out) if args.out else cfg.root / cfg.output_dir
    reports = run_multistage(cfg, out, args.format)
    for r in reports:
        print(f"stage {r.stage}: {r.ev_count} EVs, stations per provider {r.station_counts}, total {sum(r.station_counts)}")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_demand(args) -> int:
    _, data, market, policy = _stage_market(args)
    if args.prices:
        prices = np.array(args.prices, dtype=float)
    else:
        prices = solve_bertrand(market.choice, policy, market.lmp).prices
    phi, outside = market.choice.probabilities(np.nan_to_num(prices), policy)
    psi = np.tensordot(market.choice.demand, phi, axes=(0, 0))
    rows = [
        {"site": c.id, "provider": k + 1, "placed": int(policy[k, j]), "demand_kwh": _num(psi[j, k])}
        for j, c in enumerate(data.candidates) for k in range(N_PROVIDERS)
    ]
    payload = {
        "stage": args.stage,
        "prices": [_num(p) for p in prices],
        "outside_share": _num(outside.mean()) if outside.size else None,
        "demand": rows,
    }
    _emit(payload, rows, args)
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    cfg, data, market, policy = _stage_market(args)
    result = solve_bertrand(market.choice, policy, market.lmp)
    evaluator = MarketEvaluator(market, game_config(cfg, data))
    outcome = evaluator.outcome(policy)
    residual = foc_residual(market.choice, policy, result.prices, market.lmp)
    rows = [
        {"provider": k + 1, "stations": int(policy[k].sum()), "price": _num(result.prices[k]),
         "revenue": _num(outcome.revenue[k]), "foc_residual": _num(residual[k])}
        for k in range(N_PROVIDERS)
    ]
    payload = {"stage": args.stage, "iterations": result.iterations, "impact": _num(outcome.impact), "providers": rows}
    _emit(payload, rows, args)
    return EXIT_OK


def cmd_qos(args) -> int:
    _, _, market, policy = _stage_market(args)
    prices = solve_bertrand(market.choice, policy, market.lmp).prices
    phi, outside = market.choice.probabilities(np.nan_to_num(prices), policy)
    est = simulate_qos(market.agents, market.net, market.site_nodes, policy, phi, outside, market.qos,
                       market.choice.levels, market.choice.coeffs.d_th, market.geometry)
    rows = [
        {"provider": k + 1, "delay_probability": _num(e.delay_probability), "delay_se": _num(e.delay_se),
         "coverage": _num(e.coverage), "coverage_se": _num(e.coverage_se), "attempts": e.attempts, "delayed": e.delayed}
        for k, e in enumerate(est)
    ]
    _emit({"stage": args.stage, "providers": rows}, rows, args)
    return EXIT_OK


def _parse_ev(items) -> dict:
    loads = {}
    for item in items or []:
        try:
            bus, mw = item.split("=")
            loads[int(bus)] = loads.get(int(bus), 0.0) + float(mw)
        except ValueError as exc:
            raise ConfigError(f"--ev expects BUS=MW, got {item!r}") from exc
    return loads


def cmd_power_flow(args) -> int:
    sys_ = load_case(args.case)
    loads = _parse_ev(args.ev)
    kw = {"enforce_q_limits": args.q_limits}
    base = solve_power_flow(sys_, **kw)
    payload = {"case": sys_.name or str(args.case), "iterations": base.iterations, "mismatch": base.mismatch,
               "losses_mw": base.losses_mw}
    sol = base
    if loads:
        base, sol = dispatch_with_ev(sys_, loads, power_factor=args.power_factor, base=base, **kw)
        payload["impact"] = impact_metric(base, sol, per_unit=args.per_unit, base_mva=sys_.base_mva).value
        payload["ev_losses_mw"] = sol.losses_mw
    rows = [
        {"bus": b.id, "vm": _num(sol.vm[i]), "va_deg": _num(np.degrees(sol.va[i]))}
        for i, b in enumerate(sys_.buses)
    ]
    payload["buses"] = rows
    payload["generators"] = [
        {"bus": g.bus, "pg": _num(sol.pg[i]), "qg": _num(sol.qg[i])} for i, g in enumerate(sys_.generators)
    ]
    payload["q_limit_violations"] = [int(sys_.generators[i].bus) for i in sol.q_violations]
    _emit(payload, rows, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargesite", description="Staged EV charging-station placement game")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario JSON file, or the bundled name 'city40'")
            p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output path (directory for plan, file otherwise)")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    def stage_opts(p):
        p.add_argument("--stage", type=int, default=1, help="1-based stage of the penetration schedule")
        p.add_argument("--policy", default=None, help="placements as three 0/1 strings, e.g. 1100,0110,0001")

    p = sub.add_parser("plan", help="run the multi-stage placement game")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="opponent samples per expected utility")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("demand", help="charging demand forecast for one stage")
    common(p)
    stage_opts(p)
    p.add_argument("--prices", type=float, nargs=3, default=None, help="fixed prices instead of the equilibrium")
    p.set_defaults(func=cmd_demand)

    p = sub.add_parser("equilibrium", help="Bertrand prices for given placements")
    common(p)
    stage_opts(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("qos", help="delay probability and route coverage for given placements")
    common(p)
    stage_opts(p)
    p.set_defaults(func=cmd_qos)

    p = sub.add_parser("power-flow", help="AC power flow with optional EV loads")
    p.add_argument("case", help="bundled case name (ieee14, ieee118) or a case JSON file")
    common(p, scenario=False)
    p.add_argument("--ev", action="append", metavar="BUS=MW", help="EV load to add at a bus (repeatable)")
    p.add_argument("--power-factor", type=float, default=0.98)
    p.add_argument("--q-limits", action="store_true", help="convert PV buses at reactive limits to PQ")
    p.add_argument("--per-unit", action="store_true", help="report the impact metric in per-unit")
    p.set_defaults(func=cmd_power_flow)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ChargeSiteError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
