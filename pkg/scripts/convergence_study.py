"""Mesh convergence of the constrained Newton solver against the line soliton."""

import sys
from dataclasses import dataclass, field

import numpy as np
from _config import dump, parse

from graphnls import closed_forms as cf
from graphnls.discretization import build_mesh
from graphnls.metric_graph import build_standard
from graphnls.solver import newton_constrained, soliton_seed


@dataclass
class Config:
    p: float = 7.0
    lam: float = 1.0
    rho: float = 1.0
    L: float = 30.0
    hs: list = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005, 0.0025])


def main(cfg):
    print("#", dump(cfg))
    line = build_standard("line")
    mu = cf.mass_of_profile(cfg.p, cfg.lam, cfg.rho)
    sp = cf.SolitonParams(cfg.p, mu, cfg.rho)
    prev = None
    print("h,sup_err,lam_rel_err,order")
    for h in cfg.hs:
        m = build_mesh(line, h, cfg.L)
        sol = newton_constrained(m, soliton_seed(m, 0, 0.0, mu, cfg.rho, cfg.p), mu, cfg.rho, cfg.p)
        exact = m.sample_radial(0, 0.0, lambda d: cf.soliton_eval(sp, d))
        err = float(np.max(np.abs(sol.u.values - exact.values)))
        order = np.log2(prev / err) if prev else float("nan")
        print(f"{h},{err:.6e},{abs(sol.lam / sp.lam - 1):.6e},{order:.3f}")
        prev = err


if __name__ == "__main__":
    main(parse(Config, sys.argv[1:]))
