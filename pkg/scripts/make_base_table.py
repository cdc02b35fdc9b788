"""Generate the bundled 175-area synthetic base table.

Geometry: Delaunay triangulation of 175 jittered sites on a 4 x 2.5 region
(planar, county-like contiguity, every area has neighbours).

Values: the true log median income is a CAR field (rho=0.99); the published
estimate adds survey error whose SE grows for small areas. SNAP share is
negatively tied to income. Poverty counts and housing costs follow the
fitted-form model on the true income plus small residual noise, giving
counts of roughly 1e2 to 1e5.

    python scripts/make_base_table.py [--seed 175] [--out src/hgtsme/data]
"""
import argparse
import csv
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from hgtsme.areal import ArealGraph
from hgtsme.simharness import draw_car_field
from hgtsme.spatial import morans_i
from hgtsme.stochastics import RngStream

N = 175


def sites(rng):
    nx, ny = 16, 11  # 176 cells, one dropped
    gx, gy = np.meshgrid(np.linspace(0, 4, nx), np.linspace(0, 2.5, ny))
    pts = np.column_stack([gx.ravel(), gy.ravel()])[:N]
    return pts + rng.generator.uniform(-0.09, 0.09, size=pts.shape)


def delaunay_edges(pts):
    tri = Delaunay(pts)
    edges = set()
    for a, b, c in tri.simplices:
        for u, v in ((a, b), (b, c), (a, c)):
            edges.add((min(u, v), max(u, v)))
    return sorted(edges)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=175)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src/hgtsme/data")
    args = ap.parse_args(argv)
    rng = RngStream(args.seed)

    pts = sites(rng)
    edges = delaunay_edges(pts)
    graph = ArealGraph.from_edges(N, edges)

    field = draw_car_field(graph, 0.99, 1.0, rng)
    w = 10.9 + 0.25 * (field - field.mean()) / field.std()  # true log income
    pop = np.exp(rng.generator.normal(np.log(25000), 1.0, N))
    se_log = np.clip(0.9 / np.sqrt(pop / 100.0), 0.02, 0.25)
    x_log = w + se_log * rng.generator.standard_normal(N)
    income = np.exp(x_log)
    income_se = se_log * income  # delta method in reverse
    moe = 1.645 * income_se

    snap = np.clip(14.0 - 22.0 * (w - 10.9) + rng.generator.normal(0, 2.5, N), 1.0, 45.0)
    log_pov = 8.0 - 2.5 * (w - 10.9) + 0.06 * (snap - 14.0) + rng.generator.normal(0, 0.15, N)
    poverty = np.round(np.exp(log_pov))
    housing = np.exp(6.9 + 0.8 * (w - 10.9) + rng.generator.normal(0, 0.05, N))

    ids = [f"{53000 + 2 * i + 1:05d}" for i in range(N)]
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "nw175_table.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["area_id", "resp:housing_cost", "resp:poverty", "cov:income", "moe:income", "fixed:snap"])
        for i in range(N):
            wr.writerow([ids[i], f"{housing[i]:.2f}", f"{poverty[i]:.0f}", f"{income[i]:.0f}",
                         f"{moe[i]:.0f}", f"{snap[i]:.2f}"])
    with open(args.out / "nw175_adjacency.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        for a, b in edges:
            wr.writerow([ids[a], ids[b]])
    print(f"areas={N} edges={len(edges)} poverty range=({poverty.min():.0f}, {poverty.max():.0f}) "
          f"Moran's I(log income)={morans_i(x_log, graph):.3f}")


if __name__ == "__main__":
    main()
