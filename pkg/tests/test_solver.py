import math

import numpy as np
import pytest

from graphnls import closed_forms as cf
from graphnls.discretization import Mesh, build_mesh, mass, norms
from graphnls.errors import InvalidParameter, NonConvergence, UnsupportedTopology
from graphnls.metric_graph import MetricGraph, build_standard
from graphnls.mountain_pass import MPConfig, auto_path, path_max_energy
from graphnls.solver import (SolverConfig, explicit_energy_mass, explicit_even_halfline_solution,
                             explicit_sign_flip, find_tau, gradient_flow_normalized, linfty_bound,
                             multiplier, nehari_functional, nehari_minimize, nehari_scaling,
                             newton_constrained, reduced_nehari, rho_continuation, soliton_seed)

LINE = build_standard("line")
TADPOLE = build_standard("tadpole", 2.0)
P = 7.0
MU1 = cf.mass_of_profile(P, 1.0)  # mass of the lam = 1 soliton


def lam_formula(p, mu, rho):
    return cf.exponents_and_lambda(p, mu, rho)[2]


def test_config_invariants():
    with pytest.raises(InvalidParameter):
        SolverConfig(tol_residual=0.0)
    with pytest.raises(InvalidParameter):
        SolverConfig(rho_grid=(0.5, 0.9))
    with pytest.raises(InvalidParameter):
        SolverConfig(rho_grid=(0.8, 0.6, 1.0))


def test_zero_seed_rejected():
    m = build_mesh(TADPOLE, 0.05, 10.0)
    with pytest.raises(InvalidParameter):
        newton_constrained(m, m.zero(), 0.1, 1.0, P)
    with pytest.raises(InvalidParameter):
        gradient_flow_normalized(m, m.zero(), 0.1, 1.0, P)


def test_newton_line_soliton():
    sp = cf.SolitonParams(P, MU1)
    lams = []
    for h in (0.01, 0.005):
        m = build_mesh(LINE, h, 30.0)
        sol = newton_constrained(m, soliton_seed(m, 0, 0.0, MU1, 1.0, P), MU1, 1.0, P)
        assert sol.iterations <= 5
        assert abs(mass(sol.u) - MU1) <= 1e-10 * MU1
        lams.append(sol.lam)
    assert lams[-1] == pytest.approx(sp.lam, rel=1e-4)
    richardson = (4 * lams[1] - lams[0]) / 3
    assert richardson == pytest.approx(sp.lam, rel=1e-6)


def test_newton_constant_on_loop():
    g = MetricGraph(["v"], [("v", "v", 3.0)], [], "loop")
    m = build_mesh(g, 0.05)
    mu, rho = 0.6, 0.7
    sol = newton_constrained(m, m.constant(0.3), mu, rho, P)
    c = math.sqrt(mu / 3.0)
    assert np.allclose(sol.u.values, c, rtol=1e-12)
    assert sol.lam == pytest.approx(rho * c ** (P - 2), rel=1e-10)


def test_newton_quadratic_tail():
    cs = []
    for g, mu in ((LINE, MU1), (TADPOLE, 0.2)):
        if g is LINE:
            m = build_mesh(g, 0.01, 30.0)
            u0 = soliton_seed(m, 0, 0.0, mu, 1.0, P)
            u0 = u0 * 1.05 + 0.01 * m.sample_radial(0, 0.3, lambda d: np.exp(-d**2)).values
        else:
            path = auto_path(g, mu, 1.0, P)
            m, u0 = path.mesh, path.beads[path_max_energy(path).argmax]
        sol = newton_constrained(m, u0, mu, 1.0, P)
        r = np.array(sol.info["residual_history"]) / sol.info["residual_scale"]
        floor = 1e3 * max(r[-1], 1e-13)
        for a, b in zip(r[:-1], r[1:]):
            if b > floor:
                cs.append(b / a**2)
    assert cs and max(cs) < 1e3


def test_newton_nonconvergence_carries_iterate():
    m = build_mesh(TADPOLE, 0.05, 10.0)
    u0 = m.sample_radial(0, 1.0, lambda d: np.exp(-d**2))
    with pytest.raises(NonConvergence) as exc:
        newton_constrained(m, u0, 0.1, 1.0, P, SolverConfig(max_iter=1))
    assert exc.value.last is not None and exc.value.last.iterations == 1


def test_newton_from_explicit_solution():
    tg = build_standard("tgraph", 1.0)
    m = build_mesh(tg, 0.01, 30.0)
    ex = explicit_even_halfline_solution(m, 50.0, P)
    sol = newton_constrained(m, ex.u, ex.mu, 1.0, P)
    d = sol.u.values - ex.u.values
    assert math.sqrt(d @ (m.mass @ d) / ex.mu) < 5e-3
    assert sol.lam == pytest.approx(50.0, rel=1e-2)
    assert sol.iterations <= 5


def test_flow_subcritical_ground_state():
    p = 4.0
    mu = cf.mass_of_profile(p, 1.0)
    m = build_mesh(LINE, 0.005, 30.0)
    sol = gradient_flow_normalized(m, m.sample_radial(0, 0.5, lambda d: np.exp(-d**2)), mu, 1.0, p)
    _, g, Pp = cf.soliton_norms(cf.SolitonParams(p, mu))
    E = 0.5 * g - Pp / p
    assert sol.energy == pytest.approx(E, rel=1e-5)
    assert sol.lam == pytest.approx(1.0, rel=1e-5)
    # already critical: the flow stops at once
    again = gradient_flow_normalized(m, sol.u, mu, 1.0, p)
    assert again.info["flow_iterations"] == 0


def test_flow_from_mountain_pass_bead():
    mu = 0.1
    path = auto_path(TADPOLE, mu, 1.0, P)
    bead = path.beads[path_max_energy(path).argmax]
    sol = gradient_flow_normalized(path.mesh, bead, mu, 1.0, P)
    assert sol.positive and sol.energy > 0 and sol.lam > 0
    assert sol.sup <= linfty_bound(sol.lam, P, 2.0) * (1 + 1e-3)


def test_rho_continuation_line():
    m = Mesh(LINE, 0.02, 30.0, [(0, 0.0)], h_min=1e-4, grading=0.002)
    seed = soliton_seed(m, 0, 0.0, MU1, 0.5, P)
    chain = rho_continuation(m, MU1, P, SolverConfig(), seed)
    assert chain[-1].rho == 1.0 and len(chain) == len(SolverConfig().rho_grid)
    for s in chain:
        assert s.lam == pytest.approx(lam_formula(P, MU1, s.rho), rel=1e-5)


def test_rho_continuation_tadpole_small_mass():
    mu = 0.1
    path = auto_path(TADPOLE, mu, 0.5, P)
    chain = rho_continuation(path.mesh, mu, P, SolverConfig(),
                             path.beads[path_max_energy(path).argmax], solver="auto")
    assert all(s.positive and s.lam > 0 and s.energy > 0 for s in chain)
    # continuity in rho: dE/drho = -|u|_p^p / p along a branch of critical points
    E = [s.energy for s in chain]
    Pp = [norms(s.u, P).lpp for s in chain]
    for i in range(len(chain) - 1):
        slope = max(Pp[i], Pp[i + 1]) / P
        assert abs(E[i + 1] - E[i]) <= 5 * slope * (chain[i + 1].rho - chain[i].rho)


def test_multiplier_grows_as_mass_halves():
    lams = []
    for mu in (0.4, 0.2, 0.1):
        path = auto_path(TADPOLE, mu, 1.0, P)
        sol = newton_constrained(path.mesh, path.beads[path_max_energy(path).argmax], mu, 1.0, P)
        lams.append(sol.lam)
    assert lams[0] < lams[1] < lams[2]


def test_nehari_line_recovers_soliton():
    p, lam = 6.1, 1.0
    m = build_mesh(LINE, 0.005, 30.0)
    sol = nehari_minimize(m, lam, p)
    n = norms(sol.u, p)
    assert sol.info["J"] == pytest.approx((0.5 - 1 / p) * n.lpp, rel=1e-6)
    assert sol.mu == pytest.approx(cf.mass_of_profile(p, lam), rel=1e-4)
    assert sol.positive


def test_nehari_tadpole_p6_below_line():
    m = build_mesh(TADPOLE, 0.01, 30.0)
    muR = cf.critical_mass_line()
    for lam in (0.3, 1.0):
        sol = nehari_minimize(m, lam, 6.0)
        assert sol.info["J"] < lam * muR / 2


def test_nehari_scaling_homogeneity():
    m = build_mesh(TADPOLE, 0.05, 10.0)
    u = m.sample_radial(0, 1.0, lambda d: np.exp(-d**2))
    lam, p = 1.5, 6.3
    for c in (0.1, 3.0):
        assert nehari_scaling(u * c, lam, p) == pytest.approx(nehari_scaling(u, lam, p) / c, rel=1e-12)
        assert reduced_nehari(u * c, lam, p) == pytest.approx(reduced_nehari(u, lam, p), rel=1e-12)
    t = nehari_scaling(u, lam, p)
    assert nehari_functional(u * t, lam, p) == pytest.approx(reduced_nehari(u, lam, p), rel=1e-12)


def test_explicit_solution_tgraph():
    tg = build_standard("tgraph", 1.0)
    lam = 50.0
    res = []
    for h in (0.01, 0.005, 0.0025):
        sol = explicit_even_halfline_solution(build_mesh(tg, h, 10.0), lam, P)
        res.append(sol.residual)
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 1.8)
    assert sol.energy < 0 and sol.positive
    fine = explicit_even_halfline_solution(build_mesh(tg, 1.25e-4, 10.0), lam, P)
    assert fine.mu == pytest.approx(fine.info["mass_formula"], rel=1e-6)
    assert explicit_energy_mass(tg, 0.1, P)[1] > 0
    lam_star = explicit_sign_flip(tg, P)
    assert explicit_energy_mass(tg, 0.5 * lam_star, P)[1] > 0 > explicit_energy_mass(tg, 2 * lam_star, P)[1]


def test_find_tau():
    lam, p = 2.0, 7.0
    tau = find_tau(lam, p)
    assert float(cf.lambda_profile(p, lam, tau)) == pytest.approx(lam ** (1 / (p - 2)), rel=1e-13)
    # closed form: sech(k tau) = (2/p)^{1/2}
    k = cf.profile_rate(p, lam)
    assert 1 / math.cosh(k * tau) == pytest.approx(math.sqrt(2 / p), rel=1e-12)


def test_explicit_topology_guard():
    with pytest.raises(UnsupportedTopology):
        explicit_even_halfline_solution(build_mesh(TADPOLE, 0.05, 10.0), 1.0, P)


def test_multiplier_examples():
    g = MetricGraph(["v"], [("v", "v", 2.0)], [], "loop")
    m = build_mesh(g, 0.05)
    c, rho = 0.8, 0.9
    u = m.constant(c)
    assert multiplier(u, mass(u), rho, P) == pytest.approx(rho * c ** (P - 2), rel=1e-12)
    sp = cf.SolitonParams(P, MU1)
    ml = build_mesh(LINE, 0.002, 30.0)
    us = ml.sample_radial(0, 0.0, lambda d: cf.soliton_eval(sp, d))
    assert multiplier(us, mass(us), 1.0, P) == pytest.approx(sp.lam, rel=1e-5)


def test_multiplier_relabel_invariant():
    g1 = build_standard("signpost", 2.0, 1.0, 1)
    g2 = MetricGraph(["w", "v"], [g1.finite_edges[1], g1.finite_edges[0]], g1.halflines, "swapped")
    vals = []
    for g, loop in ((g1, 0), (g2, 1)):
        m = build_mesh(g, 0.05, 8.0)
        u = m.sample_radial(loop, 1.0, lambda d: np.exp(-d**2))
        vals.append(multiplier(u, mass(u), 1.0, P))
    assert vals[0] == pytest.approx(vals[1], rel=1e-12)
