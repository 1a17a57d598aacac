"""Regenerate the bundled synthetic 40-node city scenario."""

import json
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "chargesite" / "data" / "city40"
NX, NY = 8, 5


def main(seed: int = 2024) -> None:
    rng = np.random.default_rng(seed)
    nodes, pos = [], {}
    for iy in range(NY):
        for ix in range(NX):
            nid = iy * NX + ix
            x = ix + rng.uniform(-0.15, 0.15)
            y = iy + rng.uniform(-0.15, 0.15)
            pos[nid] = (x, y)
            nodes.append({
                "id": nid, "x": round(x, 4), "y": round(y, 4),
                "restaurant": bool(rng.random() < 0.3),
                "shopping": bool(rng.random() < 0.25),
                "supermarket": bool(rng.random() < 0.2),
            })
    edges = []
    for iy in range(NY):
        for ix in range(NX):
            a = iy * NX + ix
            for b in ([a + 1] if ix < NX - 1 else []) + ([a + NX] if iy < NY - 1 else []):
                d = math.dist(pos[a], pos[b]) * rng.uniform(1.0, 1.2)
                edges.append({"a": a, "b": b, "length": round(d, 4)})
    (OUT / "network.json").write_text(json.dumps({"nodes": nodes, "edges": edges}, indent=1) + "\n")

    sites = [(9, 4), (14, 5), (19, 9), (20, 10), (25, 13), (30, 14)]
    candidates = []
    for i, (node, bus) in enumerate(sites):
        candidates.append({"id": f"S{i + 1}", "node": node, "bus": bus, "levels": [1, 2, 3]})
    (OUT / "candidates.json").write_text(json.dumps({"candidates": candidates}, indent=1) + "\n")

    lmp = {str(b): round(0.08 + 0.01 * k, 4) for k, b in enumerate([4, 5, 9, 10, 13, 14])}
    (OUT / "lmp.json").write_text(json.dumps({"prices": lmp}, indent=1) + "\n")

    costs = [{"candidate": c["id"], "theta": [20.0, 20.0, 20.0]} for c in candidates]
    (OUT / "costs.json").write_text(json.dumps({"costs": costs}, indent=1) + "\n")

    coeffs = {
        "alpha": 1.0,
        "beta": -300.0,
        "d_th": 1.0,
        "q_a": 10.0,
        "q_b": 40.0,
        "nests": [
            {"sigma": 0.6, "mu": -0.8, "eta": 0.5, "gamma": 0.3, "lam": 0.2, "delta": 0.2},
            {"sigma": 0.5, "mu": -0.8, "eta": 0.4, "gamma": 0.4, "lam": 0.3, "delta": 0.2},
            {"sigma": 0.4, "mu": -0.6, "eta": 0.2, "gamma": 0.3, "lam": 0.2, "delta": 0.1},
        ],
    }
    (OUT / "coefficients.json").write_text(json.dumps(coeffs, indent=1) + "\n")

    center = np.array([(NX - 1) / 2, (NY - 1) / 2])
    dest_w = {str(n["id"]): round(float(math.exp(-0.3 * np.linalg.norm(np.array(pos[n["id"]]) - center))), 4) for n in nodes}
    scenario = {
        "network": "network.json",
        "grid": "ieee14",
        "candidates": "candidates.json",
        "coefficients": "coefficients.json",
        "lmp": "lmp.json",
        "costs": "costs.json",
        "stages": [100, 200, 400, 800],
        "seed": 7,
        "output_dir": "out",
        "population": {"income_mean": 60.0, "income_std": 15.0, "destination_weights": dest_w},
        "game": {"w": 0.5, "rho": 0.5, "samples": 16, "upsilon0": 1.0, "xi0": 0.6},
        "qos": {"replications": 3, "capacity": 4},
        "heatmap": {"nx": 8, "ny": 5},
    }
    (OUT / "scenario.json").write_text(json.dumps(scenario, indent=1) + "\n")


if __name__ == "__main__":
    main()
