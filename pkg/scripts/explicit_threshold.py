"""Energy and mass of the explicit even-half-line solution across the frequency axis."""

import csv
import sys
from dataclasses import dataclass

import numpy as np
from _config import dump, parse

from graphnls.metric_graph import build_standard
from graphnls.solver import explicit_energy_mass, explicit_sign_flip


@dataclass
class Config:
    p: float = 7.0
    edge: float = 1.0
    lam_min: float = 0.05
    lam_max: float = 50.0
    n: int = 60
    out: str = "explicit_threshold.csv"


def main(cfg):
    g = build_standard("tgraph", cfg.edge)
    lam_star = explicit_sign_flip(g, cfg.p)
    print(f"energy changes sign at lam = {lam_star!r}")
    with open(cfg.out, "w", newline="") as fh:
        fh.write(f"# {dump(cfg)} lam_star={lam_star!r}\n")
        w = csv.writer(fh)
        w.writerow(["lam", "mass", "energy"])
        for lam in np.geomspace(cfg.lam_min, cfg.lam_max, cfg.n):
            w.writerow([f"{lam:.17g}", *(f"{x:.17g}" for x in explicit_energy_mass(g, lam, cfg.p))])


if __name__ == "__main__":
    main(parse(Config, sys.argv[1:]))
