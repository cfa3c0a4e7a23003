"""Constrained critical points of E_rho on the mass sphere.

Discrete problem: find (u, lam) with  K u + lam M u = rho b(u),  u^T M u = mu,
where b(u) is the P1/Gauss load of |u|^{p-2} u.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import optimize

from . import closed_forms as cf
from .discretization import (GridFunction, energy, norms, pde_residual, project_mass,
                             residual_scale, weak_gradient)
from .errors import (ContinuationError, InvalidParameter, NonConvergence, NumericalFailure,
                     SingularJacobian, StepFailure, UnsupportedTopology)
from .metric_graph import classify, min_edge_length


def default_rho_grid(step=0.05):
    n = int(round(0.5 / step))
    return tuple(0.5 + step * i for i in range(n)) + (1.0,)


@dataclass
class SolverConfig:
    tol_residual: float = 1e-8
    # relative floor: stop once residual <= rtol * (size of the individual terms)
    rtol_residual: float = 1e-12
    max_iter: int = 60
    armijo: float = 1e-4
    min_step: float = 2.0**-20
    dt: float = 1.0
    flow_tol: float = 1e-6
    flow_rtol: float = 1e-8
    # below this relative residual a flow that cannot decrease E any more hands over to Newton
    flow_stall_rtol: float = 1e-5
    flow_max_iter: int = 3000
    max_halvings: int = 30
    rho_grid: tuple = field(default_factory=default_rho_grid)
    max_rho_halvings: int = 4
    nehari_max_iter: int = 2000
    nehari_tol: float = 1e-12
    restarts: int = 5
    seed: int = 0
    check_invariants: bool = False

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise InvalidParameter("tol_residual must be positive")
        g = list(self.rho_grid)
        if g != sorted(g) or not g or g[-1] != 1.0 or g[0] < 0.5 - 1e-15:
            raise InvalidParameter("rho_grid must be ascending within [1/2, 1] and end at 1")


def _checking(cfg):
    return cfg.check_invariants or os.environ.get("GRAPHNLS_CHECK_INVARIANTS") == "1"


@dataclass
class StationarySolution:
    u: GridFunction
    lam: float
    mu: float
    rho: float
    p: float
    energy: float
    residual: float
    iterations: int
    positive: bool
    info: dict = field(default_factory=dict)

    @property
    def relative_residual(self):
        return self.info.get("relative_residual", math.nan)

    @property
    def sup(self):
        return float(np.max(np.abs(self.u.values)))

    def summary(self):
        return dict(lam=self.lam, mu=self.mu, rho=self.rho, p=self.p, energy=self.energy,
                    residual=self.residual, relative_residual=self.relative_residual,
                    iterations=self.iterations, positive=self.positive, sup=self.sup,
                    method=self.info.get("method"))


def multiplier(u, mu, rho, p, mesh=None):
    n = norms(u, p, mesh)
    return (rho * n.lpp - n.gradsq) / mu


def linfty_bound(lam, p, e0, rho=1.0):
    """A priori sup bound for positive solutions, extended to the rho-family."""
    extra = 0.0 if math.isinf(e0) else p * math.pi**2 / (2 * e0**2)
    return (max((p / 2) * lam + extra, 0.0) / rho) ** (1.0 / (p - 2))


def _finish(u, lam, mu, rho, p, it, method, history=None, cfg=None, **extra):
    m = u.mesh
    res = pde_residual(u, lam, rho, p)
    scale = residual_scale(u, lam, rho, p)
    v = u.values
    sup = float(np.max(np.abs(v)))
    # far tails of concentrated solutions underflow to 0, so positivity is judged
    # up to the undershoot tolerance of -1e-8 sup
    positive = bool(sup > 0 and v.min() > -1e-8 * sup)
    info = dict(method=method, relative_residual=res / scale if scale > 0 else math.inf,
                residual_scale=scale, residual_history=list(history or []),
                strictly_positive=bool(v.size and v.min() > 0), min_value=float(v.min()), **extra)
    sol = StationarySolution(u, lam, mu, rho, p, energy(u, rho, p), res, it, positive, info)
    if cfg is not None and _checking(cfg):
        _assert_invariants(sol)
    return sol


def _assert_invariants(sol):
    m = sol.u.mesh
    n = norms(sol.u, sol.p)
    if abs(n.l2sq - sol.mu) > 1e-10 * sol.mu:
        raise AssertionError(f"mass drift {n.l2sq} vs {sol.mu}")
    lam2 = (sol.rho * n.lpp - n.gradsq) / sol.mu
    if abs(lam2 - sol.lam) > 1e-8 * max(1.0, abs(sol.lam)):
        raise AssertionError(f"multiplier formulas disagree: {lam2} vs {sol.lam}")
    if sol.positive:
        bound = linfty_bound(sol.lam, sol.p, min_edge_length(m.graph), sol.rho)
        # P1 interpolation can overshoot the tight line bound at the O(h^2) level
        if n.sup > bound * (1 + 1e-3):
            raise AssertionError(f"sup {n.sup} exceeds a priori bound {bound}")


# --- bordered Newton ---------------------------------------------------------

def _newton_system(m, v, lam, rho, p):
    K, M = m.stiffness, m.mass
    Mv = M @ v
    A = (K + lam * M - rho * m.load_jacobian(v, p)).tocsc()
    col = sp.csc_matrix(Mv.reshape(-1, 1))
    return sp.bmat([[A, col], [col.T, None]], format="csc"), Mv


def newton_constrained(mesh, u0, mu, rho, p, cfg=None, lam0=None):
    """Damped Newton on (u, lam) for the bordered system."""
    cfg = cfg or SolverConfig()
    if not mu > 0:
        raise InvalidParameter("mu must be positive")
    v0 = u0.values if isinstance(u0, GridFunction) else np.asarray(u0, float)
    if not np.any(v0):
        raise InvalidParameter("zero initial guess is a trivial critical point")
    u = project_mass(GridFunction(mesh, v0), mu)
    v = u.values
    lam = multiplier(u, mu, rho, p) if lam0 is None else float(lam0)
    M = mesh.mass

    def F(v, lam):
        f1 = weak_gradient(v, rho, p, mesh) + lam * (M @ v)
        f2 = 0.5 * (v @ (M @ v) - mu)
        return f1, f2

    def merit(f1, f2):
        return float(f1 @ mesh.mass_lu.solve(f1)) + (f2 / math.sqrt(mu)) ** 2 * max(lam_scale, 1.0)

    lam_scale = max(abs(lam), 1.0) ** 2
    f1, f2 = F(v, lam)
    history = []
    stall = 0
    for it in range(cfg.max_iter + 1):
        res = math.sqrt(max(float(f1 @ mesh.mass_lu.solve(f1)), 0.0))
        scale = residual_scale(v, lam, rho, p, mesh)
        history.append(res)
        floor = max(cfg.tol_residual, cfg.rtol_residual * scale)
        if res <= floor and abs(f2) <= 1e-12 * mu:
            break
        # round-off floor: no progress over three iterations while already tiny
        if len(history) > 3 and res > 0.5 * min(history[-4:-1]) and res <= 1e-9 * scale:
            stall += 1
            if stall >= 2:
                break
        if it == cfg.max_iter:
            raise NonConvergence(f"Newton did not converge in {cfg.max_iter} steps "
                                 f"(residual {res:.3e})",
                                 last=_finish(project_mass(GridFunction(mesh, v), mu), lam, mu,
                                              rho, p, it, "newton", history))
        J, _ = _newton_system(mesh, v, lam, rho, p)
        rhs = -np.append(f1, f2)
        try:
            step = spla.splu(J).solve(rhs)
        except RuntimeError as exc:
            raise SingularJacobian(f"bordered Jacobian singular at lam={lam:.6g}: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian(f"bordered Jacobian singular at lam={lam:.6g}")
        dv, dlam = step[:-1], step[-1]
        m0 = merit(f1, f2)
        s = 1.0
        while True:
            vn, ln = v + s * dv, lam + s * dlam
            g1, g2 = F(vn, ln)
            m1 = merit(g1, g2)
            if m1 <= (1 - cfg.armijo * s) * m0 or s <= cfg.min_step:
                break
            s *= 0.5
        v, lam, f1, f2 = vn, ln, g1, g2
    u = project_mass(GridFunction(mesh, v), mu)
    lam_newton = lam
    lam = multiplier(u, mu, rho, p)
    return _finish(u, lam, mu, rho, p, it, "newton", history, cfg, lam_newton=lam_newton)


# --- normalized gradient flow -------------------------------------------------

def _power_fiber(v, theta, mu, mesh):
    w = np.abs(v) ** theta
    return project_mass(GridFunction(mesh, w), mu).values


def _fiber_max(v, mu, rho, p, mesh):
    """Maximize E along the mass-normalized power fiber |u|^theta (p > 6 saddle direction)."""
    f = lambda s: -energy(_power_fiber(v, math.exp(s), mu, mesh), rho, p, mesh)
    r = optimize.minimize_scalar(f, bounds=(-0.7, 0.7), method="bounded",
                                 options=dict(xatol=1e-7))
    s = r.x if -r.fun > -f(0.0) else 0.0
    return _power_fiber(v, math.exp(s), mu, mesh) if s else v


def gradient_flow_normalized(mesh, u0, mu, rho, p, cfg=None, polish=True):
    """Sobolev-preconditioned normalized gradient flow.

    Each step moves along -(K + sigma M)^{-1}(K u + lam(u) M u - rho b(u)) and
    reprojects the mass.  For p > 6 critical points are saddles on the sphere, so every
    iterate is additionally pushed to the maximum of E along its power fiber; the
    energy of these fiber maxima is what decreases.
    """
    cfg = cfg or SolverConfig()
    v0 = u0.values if isinstance(u0, GridFunction) else np.asarray(u0, float)
    if not np.any(v0):
        raise InvalidParameter("zero initial guess is a trivial critical point")
    saddle = p > 6
    v = project_mass(GridFunction(mesh, v0), mu).values
    if saddle:
        v = _fiber_max(v, mu, rho, p, mesh)
    K, M = mesh.stiffness, mesh.mass
    E = energy(v, rho, p, mesh)
    dt = cfg.dt
    lu, sigma_f = None, None
    energies = [E]
    for it in range(cfg.flow_max_iter):
        lam = multiplier(v, mu, rho, p, mesh)
        r = weak_gradient(v, rho, p, mesh) + lam * (M @ v)
        res = math.sqrt(max(float(r @ mesh.mass_lu.solve(r)), 0.0))
        scale = residual_scale(v, lam, rho, p, mesh)
        if res <= max(cfg.flow_tol, cfg.flow_rtol * scale):
            break
        sigma = max(abs(lam), 1e-3 * max(1.0, abs(lam)))
        if lu is None or abs(sigma - sigma_f) > 0.2 * sigma_f:
            lu, sigma_f = spla.splu((K + sigma * M).tocsc()), sigma
        d = lu.solve(r)
        for _ in range(cfg.max_halvings + 1):
            w = project_mass(GridFunction(mesh, v - dt * d), mu).values
            if saddle:
                w = _fiber_max(w, mu, rho, p, mesh)
            En = energy(w, rho, p, mesh)
            if En <= E + 1e-14 * abs(E):
                break
            dt *= 0.5
        else:
            if res <= cfg.flow_stall_rtol * scale:
                dt = cfg.dt
                break  # round-off floor of the energy comparison
            raise StepFailure(f"energy increases at every step size (dt={dt:.3g})")
        v, E = w, En
        energies.append(E)
        dt = min(cfg.dt, dt * 1.5)
    else:
        if not polish:
            raise NonConvergence("gradient flow hit flow_max_iter",
                                 last=_finish(GridFunction(mesh, v), multiplier(v, mu, rho, p, mesh),
                                              mu, rho, p, cfg.flow_max_iter, "flow"))
    if np.any(np.diff(energies) > 1e-12 * np.maximum(1.0, np.abs(energies[1:]))):
        raise AssertionError("flow energy increased")
    u = GridFunction(mesh, v)
    if polish:
        sol = newton_constrained(mesh, u, mu, rho, p, cfg)
        sol.info["method"] = "flow+newton"
        sol.info["flow_iterations"] = it
        sol.info["flow_energies"] = energies
        return sol
    return _finish(u, multiplier(v, mu, rho, p, mesh), mu, rho, p, it, "flow", cfg=cfg,
                   flow_energies=energies)


# --- Nehari manifold ---------------------------------------------------------

def nehari_scaling(u, lam, p, mesh=None):
    """t with t^{p-2} = (|u'|^2 + lam |u|^2) / |u|_p^p."""
    n = norms(u, p, mesh)
    return ((n.gradsq + lam * n.l2sq) / n.lpp) ** (1.0 / (p - 2))


def nehari_functional(u, lam, p, mesh=None):
    n = norms(u, p, mesh)
    return 0.5 * n.gradsq + 0.5 * lam * n.l2sq - n.lpp / p


def reduced_nehari(u, lam, p, mesh=None):
    """J_{lam,p}(t(u) u), 0-homogeneous in u."""
    n = norms(u, p, mesh)
    Q = n.gradsq + lam * n.l2sq
    return (0.5 - 1.0 / p) * Q ** (p / (p - 2)) / n.lpp ** (2.0 / (p - 2))


def _nehari_ascent(mesh, A_lu, A, v, p, cfg):
    """Maximize lpp on {v^T A v = 1}; monotone since lpp is convex."""
    v = np.abs(v)
    v /= math.sqrt(v @ (A @ v))
    f = mesh.lpp(v, p)
    for it in range(cfg.nehari_max_iter):
        w = np.abs(A_lu.solve(mesh.load(v, p)))
        nw = math.sqrt(w @ (A @ w))
        if not nw > 0:
            return v, 0.0, it
        w /= nw
        fn = mesh.lpp(w, p)
        v, done = w, abs(fn - f) <= cfg.nehari_tol * abs(fn)
        f = fn
        if done:
            break
    return v, f, it


def nehari_minimize(mesh, lam, p, cfg=None, seeds=None):
    """Minimize the reduced Nehari functional at fixed frequency lam (rho = 1).

    The mass of the result is an output.  Seeds default to positive bumps at random
    nodes; the best of them is polished by Newton at fixed lam.
    """
    cfg = cfg or SolverConfig()
    if not lam > 0:
        raise InvalidParameter("lam must be positive")
    K, M = mesh.stiffness, mesh.mass
    A = (K + lam * M).tocsc()
    A_lu = spla.splu(A)
    rng = np.random.default_rng(cfg.seed)
    seeds = list(seeds or [])
    ids, xs = mesh.node_positions()
    width = 1.0 / math.sqrt(lam)
    bump = lambda d: np.exp(-(d / (2 * width)) ** 2)
    # deterministic seeds first: bumps at the middle of every bounded edge
    for k, (_, _, ln) in enumerate(mesh.graph.finite_edges):
        if len(seeds) < cfg.restarts:
            seeds.append(mesh.sample_radial(k, ln / 2, bump).values)
    while len(seeds) < cfg.restarts:
        k = int(rng.integers(mesh.n))
        seeds.append(mesh.sample_radial(int(ids[k]), float(xs[k]), bump).values)
    best = None
    attempts = 0
    for s in seeds[: max(cfg.restarts, 1)]:
        s = s.values if isinstance(s, GridFunction) else np.asarray(s, float)
        attempts += 1
        v, f, it = _nehari_ascent(mesh, A_lu, A, s, p, cfg)
        if not f > 1e-300:
            continue  # collapsed, try the next seed
        J = reduced_nehari(v, lam, p, mesh)
        if best is None or J < best[0]:
            best = (J, v, it)
    if best is None:
        raise NonConvergence(f"Nehari ascent collapsed for all {attempts} seeds")
    J0, v, it = best
    u = v * nehari_scaling(v, lam, p, mesh)
    # fixed-lam Newton polish of K u + lam M u = b(u)
    history = []
    for k in range(cfg.max_iter):
        r = A @ u - mesh.load(u, p)
        res = math.sqrt(max(float(r @ mesh.mass_lu.solve(r)), 0.0))
        history.append(res)
        if res <= max(cfg.tol_residual, cfg.rtol_residual * residual_scale(u, lam, 1.0, p, mesh)):
            break
        J = (A - mesh.load_jacobian(u, p)).tocsc()
        try:
            du = spla.splu(J).solve(-r)
        except RuntimeError as exc:
            raise SingularJacobian(f"Nehari polish Jacobian singular: {exc}") from exc
        u = u + du
    u = GridFunction(mesh, u)
    mu = float(u.values @ (M @ u.values))
    sol = _finish(u, lam, mu, 1.0, p, it, "nehari", history, cfg,
                  J=nehari_functional(u, lam, p), J_ascent=J0)
    return sol


# --- rho continuation -----------------------------------------------------------

def rho_continuation(mesh, mu, p, cfg=None, u0=None, solver="newton"):
    """Solve along cfg.rho_grid with warm starts; failing steps are bisected."""
    cfg = cfg or SolverConfig()
    grid = list(cfg.rho_grid)
    if u0 is None:
        raise InvalidParameter("rho continuation needs a seed u0 at the first rho")
    if solver == "newton":
        solve = newton_constrained
    elif solver == "flow":
        solve = gradient_flow_normalized
    elif solver == "auto":
        def solve(mesh, u, mu, rho, p, cfg):
            try:
                return newton_constrained(mesh, u, mu, rho, p, cfg)
            except NumericalFailure:
                return gradient_flow_normalized(mesh, u, mu, rho, p, cfg)
    else:
        raise InvalidParameter(f"unknown solver {solver!r}")
    chain = []
    u = u0
    prev = None
    targets = list(grid)
    depth = 0
    while targets:
        rho = targets[0]
        try:
            sol = solve(mesh, u, mu, rho, p, cfg)
        except (NumericalFailure, NonConvergence) as exc:
            if prev is None or depth >= cfg.max_rho_halvings:
                raise ContinuationError(f"continuation failed at rho={rho:.6g}: {exc}",
                                        rho=rho, cause=exc) from exc
            targets.insert(0, 0.5 * (prev + rho))
            depth += 1
            continue
        depth = 0
        chain.append(sol)
        u, prev = sol.u, rho
        targets.pop(0)
    return chain


# --- explicit solution on graphs with paired half-lines -----------------------

def find_tau(lam, p, tol=1e-14):
    """tau > 0 with phi_lam(tau) = lam^{1/(p-2)}, by bisection on the closed form."""
    target = lam ** (1.0 / (p - 2))
    f = lambda t: float(cf.lambda_profile(p, lam, t)) - target
    lo, hi = 0.0, 1.0 / math.sqrt(lam)
    while f(hi) > 0:
        hi *= 2
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def explicit_energy_mass(g, lam, p):
    """Closed-form (mass, energy) of the explicit constant-core solution."""
    rep = classify(g)
    k = rep.n_halflines / 2
    K = rep.compact_core_length
    m1, g1, P1 = cf.unit_profile_norms(p)
    mass = K * lam ** (2 / (p - 2)) + k * lam ** ((6 - p) / (2 * (p - 2))) * m1
    en = k * (g1 / 2 - P1 / p) * lam ** ((p + 2) / (2 * (p - 2))) - K / p * lam ** (p / (p - 2))
    return mass, en


def explicit_even_halfline_solution(mesh, lam, p, cfg=None):
    g = mesh.graph
    rep = classify(g)
    if not rep.every_vertex_even_halflines or not g.finite_edges or rep.n_halflines == 0:
        raise UnsupportedTopology("explicit construction needs an even number of half-lines "
                                  "at every vertex and a nonempty compact core")
    if not lam > 0:
        raise InvalidParameter("lam must be positive")
    tau = find_tau(lam, p)
    c = lam ** (1.0 / (p - 2))
    m = len(g.finite_edges)
    sign = {}
    seen = {}
    for j, v in enumerate(g.halflines):
        n = seen.get(v, 0)
        sign[m + j] = 1.0 if n % 2 == 0 else -1.0  # +: phi(x + tau), -: phi(x - tau)
        seen[v] = n + 1

    def f(k, anchor, offset):
        if k < m:
            return np.full(anchor.shape, c)
        x = anchor + offset
        return cf.lambda_profile(p, lam, x + sign[k] * tau)

    u = mesh.sample(f)
    mu = float(u.values @ (mesh.mass @ u.values))
    mass_cf, en_cf = explicit_energy_mass(g, lam, p)
    return _finish(u, lam, mu, 1.0, p, 0, "explicit", cfg=cfg, tau=tau,
                   mass_formula=mass_cf, energy_formula=en_cf)


def explicit_sign_flip(g, p, lo=1e-3, hi=1e3, tol=1e-12):
    """Frequency where the closed-form energy of the explicit solution changes sign."""
    e = lambda lam: explicit_energy_mass(g, lam, p)[1]
    if not (e(lo) > 0 > e(hi)):
        raise NumericalFailure("no sign change of the explicit energy in the bracket")
    while hi / lo - 1 > tol:
        mid = math.sqrt(lo * hi)
        if e(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


# --- seeds -------------------------------------------------------------------

def soliton_seed(mesh, edge_id, x0, mu, rho, p, half=False):
    """Line soliton of mass mu (or 2 mu when ``half``) centred at (edge_id, x0)."""
    params = cf.SolitonParams(p, 2 * mu if half else mu, rho)
    return mesh.sample_radial(edge_id, x0, lambda d: cf.soliton_eval(params, d))
