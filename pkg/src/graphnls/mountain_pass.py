"""Fixed-mass paths, explicit candidate paths and min-max relaxation.

All candidate paths are built from the mass-preserving dilations
``gbar_s(x) = sqrt(s) phi(s x)`` of a soliton, with ``s(t) = A t + eps`` for
``t`` in [0, 1].  The end bead must satisfy E_{1/2} < 0, which along the dilation
curve of phi_{mu,rho} means s > ((p-2) rho / 2)^{2/(p-6)} =: A.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import optimize

from . import closed_forms as cf
from .discretization import GridFunction, Mesh, energy, norms, project_mass, weak_gradient
from .errors import ConfigurationError, InvalidParameter, OutOfRegime, UnsupportedTopology
from .metric_graph import build_standard, classify
from .solver import multiplier


@dataclass
class MPConfig:
    p: float = 7.0
    delta: float | None = None  # None: half the gradsq of the initial start bead
    n_beads: int = 64
    eps: float = 0.25  # initial path start offset, halved until the endpoints verify
    relax_iters: int = 30
    step: float = 0.5  # descent step in the preconditioned metric
    max_backoff: int = 8
    reparam_weight: float = 2.0
    # mesh
    h_max: float = 0.02
    L: float = 30.0
    pts_per_width: float = 60.0
    grading: float = 0.02
    halfline_segment: float | None = None  # 4*ell on a half-line; default min(L/2, 8 widths of gbar_eps)

    def __post_init__(self):
        if self.n_beads < 16:
            raise InvalidParameter("n_beads must be >= 16")
        if not self.p > 6:
            raise OutOfRegime("mountain-pass geometry needs p > 6")
        if not 0 < self.eps < self.a_p:
            raise InvalidParameter("eps must lie in (0, a_p)")

    @property
    def a_p(self):
        return ((self.p - 2) / 4) ** (2 / (self.p - 6))

    def a_end(self, rho):
        """Dilation factor beyond which E_{1/2} < 0 along the curve of phi_{mu,rho}."""
        return ((self.p - 2) * rho / 2) ** (2 / (self.p - 6))


@dataclass
class PathOnSphere:
    beads: list
    mu: float
    rho: float
    p: float
    s: np.ndarray = None  # dilation factor per bead (construction paths)
    delta: float = None
    kind: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def mesh(self):
        return self.beads[0].mesh

    def energies(self, rho=None):
        r = self.rho if rho is None else rho
        return np.array([energy(b, r, self.p) for b in self.beads])


def check_endpoints(path, cfg=None):
    delta = path.delta if cfg is None or cfg.delta is None else cfg.delta
    g0 = norms(path.beads[0], path.p).gradsq
    end = energy(path.beads[-1], 0.5, path.p)
    return bool(g0 <= delta), bool(end < 0)


@dataclass(frozen=True)
class Level:
    level: float
    argmax: int
    valid: bool


def path_max_energy(path, rho=None, cfg=None):
    E = path.energies(rho)
    k = int(np.argmax(E))
    ok = all(check_endpoints(path, cfg)) if path.delta is not None else False
    return Level(float(E[k]), k, ok)


# --- construction helpers ------------------------------------------------------

def _widths(mu, rho, p, cfg, mass_scale=1.0):
    sp = cf.SolitonParams(p, mass_scale * mu, rho)
    return sp, 1.0 / sp.rate


def _graded_mesh(g, foci, width, cfg, a_end):
    h_min = width / (cfg.pts_per_width * (a_end + 1.0))
    return Mesh(g, cfg.h_max, cfg.L if g.halflines else None, foci,
                h_min=min(h_min, cfg.h_max / 4), grading=cfg.grading)


def _s_grid(cfg, rho, eps):
    A = cfg.a_end(rho)
    t = np.linspace(0.0, 1.0, cfg.n_beads)
    ts = (1.0 - eps) / A
    if 0 < ts < 1:
        t[int(np.argmin(np.abs(t - ts)))] = ts
    s = A * t + eps
    k = int(np.argmin(np.abs(s - 1.0)))
    if abs(s[k] - 1.0) < 1e-12:
        s[k] = 1.0
    return t, s


def _build_with_eps(builder, mu, rho, p, cfg, kind, **meta):
    """Build beads for shrinking eps until both endpoint predicates hold."""
    eps = cfg.eps
    delta = cfg.delta
    for attempt in range(21):
        t, s = _s_grid(cfg, rho, eps)
        beads, extra = builder(s)
        beads = [project_mass(b, mu) for b in beads]
        if delta is None:
            delta = 0.5 * norms(beads[0], p).gradsq
        path = PathOnSphere(beads, mu, rho, p, s, delta, kind, dict(meta, eps=eps, t=t, **extra))
        start_ok, end_ok = check_endpoints(path)
        if start_ok and end_ok:
            return path
        eps *= 0.5
    raise ConfigurationError(f"{kind} path endpoints fail after 20 eps halvings")


def _dilated(params, s):
    """x -> sqrt(s) phi(s x) as a function of the distance to the centre."""
    return lambda d: math.sqrt(s) * cf.soliton_eval(params, s * d)


def canonical_line_path(mu, rho, p, cfg=None, n_beads=None, graph=None):
    """Dilation path of the line soliton centred at the vertex of the line graph.

    ``graph`` may be the half-line graph, in which case the mass-2 mu profile is
    restricted to the half-line (the restriction construction).
    """
    cfg = cfg or MPConfig(p=p)
    if n_beads:
        cfg = _replace(cfg, n_beads=n_beads)
    g = graph or build_standard("line")
    half = g.n_edges == 1 and not g.finite_edges
    if g.finite_edges or g.n_edges not in (1, 2):
        raise UnsupportedTopology("canonical path lives on the line or the half-line")
    params, w = _widths(mu, rho, p, cfg, 2.0 if half else 1.0)
    mesh = _graded_mesh(g, [(0, 0.0)], w, cfg, cfg.a_end(rho))

    def build(s):
        return [mesh.sample_radial(0, 0.0, _dilated(params, si)) for si in s], {}

    return _build_with_eps(build, mu, rho, p, cfg, "halfline" if half else "line")


def _replace(cfg, **kw):
    d = dict(cfg.__dict__)
    d.update(kw)
    return MPConfig(**d)


def _taper(profile, ell):
    """gbar on [0, ell], linear taper gbar(ell)(2 - d/ell) on [ell, 2 ell], 0 beyond."""
    def f(d):
        d = np.asarray(d, float)
        core = profile(np.minimum(d, ell))
        edge = profile(np.array(ell)) * np.clip(2.0 - d / ell, 0.0, 1.0)
        return np.where(d <= ell, core, edge)
    return f


def edge_supported_path(g, edge_id, mu, rho, p, cfg=None):
    """Soliton path squeezed onto one edge of length 4 ell (tapered, renormalized).

    For a half-line id the segment [0, 4 ell] at its start is used.
    """
    cfg = cfg or MPConfig(p=p)
    m = len(g.finite_edges)
    if not 0 <= edge_id < g.n_edges:
        raise InvalidParameter(f"no edge {edge_id}")
    params, w = _widths(mu, rho, p, cfg)
    if edge_id < m:
        a, b, length = g.finite_edges[edge_id]
        if a == b:
            raise UnsupportedTopology("edge-supported path needs a non-loop edge")
    else:
        length = cfg.halfline_segment or min(cfg.L / 2, 400 * w / cfg.eps)
    ell = length / 4
    centre = 2 * ell
    mesh = _graded_mesh(g, [(edge_id, centre)], w, cfg, cfg.a_end(rho))
    on_edge = mesh.edges[edge_id]
    local = np.abs((on_edge.anchor - centre) + on_edge.offset)

    def build(s):
        beads, raw = [], []
        for si in s:
            f = _taper(_dilated(params, si), ell)
            vals = mesh.sample(lambda k, an, of: f(local) if k == edge_id
                               else np.zeros_like(an)).values
            raw.append(float(vals @ (mesh.mass @ vals)))
            beads.append(GridFunction(mesh, vals))
        return beads, {"raw_mass": np.array(raw)}

    path = _build_with_eps(build, mu, rho, p, cfg, "edge", edge_id=edge_id, ell=ell)
    E = path.energies()
    k = int(np.argmax(E))
    gl = cf.soliton_energy(p, mu, rho)
    path.meta["taper_warning"] = bool(abs(E[k] - gl) > 0.2 * abs(gl))
    if path.meta["taper_warning"]:
        warnings.warn("edge too short for the soliton: taper correction above 20%")
    return path


def find_pendant(g):
    for k, (a, b, ln) in enumerate(g.finite_edges):
        if a == b:
            continue
        if g.degree(b) == 1:
            return k, ln  # tip at x = ln
        if g.degree(a) == 1:
            return k, 0.0
    raise UnsupportedTopology("graph has no pendant")


def pendant_path(g, mu, rho, p, cfg=None):
    """Half-soliton (mass-2 mu profile) with its peak at the pendant tip."""
    cfg = cfg or MPConfig(p=p)
    k, tip = find_pendant(g)
    length = g.finite_edges[k][2]
    params, w = _widths(mu, rho, p, cfg, 2.0)
    mesh = _graded_mesh(g, [(k, tip)], w, cfg, cfg.a_end(rho))
    e = mesh.edges[k]
    d = np.where(e.anchor == tip, np.abs(e.offset), np.abs((e.anchor - tip) + e.offset))
    ell = length / 2

    def build(s):
        beads = []
        for si in s:
            f = _taper(_dilated(params, si), ell)
            beads.append(mesh.sample(lambda kk, an, of: f(d) if kk == k else np.zeros_like(an)))
        return beads, {}

    return _build_with_eps(build, mu, rho, p, cfg, "pendant", edge_id=k, tip=tip)


def find_signpost(g):
    """(vertex, loop edge id, stem edge id) for a degree-3 vertex carrying a loop."""
    for v in g.vertices:
        inc = g.incident(v)
        loops = [k for k in inc if g.is_loop(k)]
        others = [k for k in inc if not g.is_loop(k)]
        if len(loops) == 1 and len(others) == 1 and g.degree(v) == 3:
            return v, loops[0], others[0]
    raise UnsupportedTopology("no signpost (loop + one bounded edge or half-line at a degree-3 vertex)")


def signpost_path(g, mu, rho, p, cfg=None):
    """Soliton bulk on the loop, half-speed copy of the tails along the stem."""
    cfg = cfg or MPConfig(p=p)
    v, loop, stem = find_signpost(g)
    ell = g.finite_edges[loop][2] / 2
    m = len(g.finite_edges)
    params, w = _widths(mu, rho, p, cfg)
    mesh = _graded_mesh(g, [(loop, ell)], w, cfg, cfg.a_end(rho))
    le = mesh.edges[loop]
    y = np.where(le.anchor == ell, np.abs(le.offset), np.abs((le.anchor - ell) + le.offset))
    se = mesh.edges[stem]
    z = se.x
    if stem < m:
        a, b, slen = g.finite_edges[stem]
        if a != v:
            z = slen - z
        half_stem = slen / 2
    else:
        half_stem = None

    def stem_profile(prof, z):
        val = prof((z + 2 * ell) / 2)
        if half_stem is None:
            return val
        cap = prof(np.array((half_stem + 2 * ell) / 2)) * np.clip(2 - z / half_stem, 0, 1)
        return np.where(z <= half_stem, val, cap)

    def build(s):
        beads, raw_grad = [], []
        for si in s:
            prof = _dilated(params, si)

            def f(k, an, of):
                if k == loop:
                    return prof(y)
                if k == stem:
                    return stem_profile(prof, z)
                return np.zeros_like(an)

            b = mesh.sample(f)
            raw_grad.append(norms(b, p).gradsq)
            beads.append(b)
        return beads, {"raw_gradsq": np.array(raw_grad)}

    path = _build_with_eps(build, mu, rho, p, cfg, "signpost", loop=loop, stem=stem)
    # dilation of the exact soliton: |gbar_s'|^2 = s^2 |phi'|^2
    g1 = cf.soliton_norms(params)[1]
    path.meta["line_gradsq"] = path.s**2 * g1
    path.meta["tail_saving_log10"] = signpost_log10_saving(mu, rho, p, ell)
    return path


def signpost_log10_saving(mu, rho, p, ell):
    """log10 of (3/8) * |phi'|^2 on |x| > ell for the exact soliton (energy gained)."""
    sp = cf.SolitonParams(p, mu, rho)
    q = 2.0 / (p - 2)
    k = sp.rate
    # phi'^2 ~ (q k A 2^q)^2 e^{-2 q k x}; integral over two tails
    log_a = 2 * (math.log(q * k * sp.peak) + q * math.log(2.0))
    log_int = log_a - 2 * q * k * ell - math.log(q * k)
    return (math.log(3 / 8) + log_int) / math.log(10)


def central_edge(g):
    """Non-loop bounded edge whose midpoint is farthest from every half-line."""
    dist = {v: math.inf for v in g.vertices}
    for v in set(g.halflines) | set(g.dirichlet):
        dist[v] = 0.0
    heap = [(0.0, v) for v, d in dist.items() if d == 0.0]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for a, b, ln in g.finite_edges:
            for x, y in ((a, b), (b, a)):
                if x == v and d + ln < dist[y]:
                    dist[y] = d + ln
                    heapq.heappush(heap, (d + ln, y))
    best, key = None, -1.0
    for k, (a, b, ln) in enumerate(g.finite_edges):
        if a == b:
            continue
        mid = min(dist[a], dist[b]) + ln / 2 if math.isfinite(min(dist[a], dist[b])) else ln / 2
        if mid > key + 1e-12:
            best, key = k, mid
    return best


def auto_path(g, mu, rho, p, cfg=None):
    rep = classify(g) if not g.dirichlet else None
    if not g.finite_edges and len(g.halflines) == 2:
        return canonical_line_path(mu, rho, p, cfg)
    if not g.finite_edges and len(g.halflines) == 1:
        return canonical_line_path(mu, rho, p, cfg, graph=g)
    if rep is not None and rep.has_pendant:
        return pendant_path(g, mu, rho, p, cfg)
    if rep is not None and rep.has_signpost:
        try:
            return signpost_path(g, mu, rho, p, cfg)
        except UnsupportedTopology:
            pass
    k = central_edge(g)
    if k is not None:
        return edge_supported_path(g, k, mu, rho, p, cfg)
    return edge_supported_path(g, len(g.finite_edges), mu, rho, p, cfg)


# --- min-max relaxation ------------------------------------------------------------

def _descend(bead, mu, rho, p, step):
    m = bead.mesh
    v = bead.values
    lam = multiplier(v, mu, rho, p, m)
    r = weak_gradient(v, rho, p, m) + lam * (m.mass @ v)
    sigma = max(abs(lam), 1e-3)
    d = spla.spsolve((m.stiffness + sigma * m.mass).tocsc(), r)
    return project_mass(GridFunction(m, v - step * d), mu)


def _h1_dist(a, b):
    m = a.mesh
    d = a.values - b.values
    return math.sqrt(float(d @ (m.stiffness @ d)) + float(d @ (m.mass @ d)))


def _reparam_segment(beads, E, mu, weight, span):
    n = len(beads)
    if n <= 2:
        return list(beads)
    wts = 1.0 + weight * (0.5 * (E[1:] + E[:-1]) - E.min()) / span
    seg = np.array([_h1_dist(beads[i], beads[i + 1]) for i in range(n - 1)]) * wts
    if not np.all(np.isfinite(seg)) or seg.sum() == 0:
        return list(beads)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    arc /= arc[-1]
    out = [beads[0]]
    for tt in np.linspace(0.0, 1.0, n)[1:-1]:
        j = min(int(np.searchsorted(arc, tt, side="right")) - 1, n - 2)
        frac = (tt - arc[j]) / max(arc[j + 1] - arc[j], 1e-300)
        v = (1 - frac) * beads[j].values + frac * beads[j + 1].values
        out.append(project_mass(GridFunction(beads[0].mesh, v), mu))
    out.append(beads[-1])
    return out


def _reparametrize(beads, E, mu, weight, pin=None):
    """Equal energy-weighted H1 arclength; the bead ``pin`` (top of the string) is kept."""
    span = max(E.max() - E.min(), 1e-300)
    if pin is None or pin in (0, len(beads) - 1):
        return _reparam_segment(beads, E, mu, weight, span)
    left = _reparam_segment(beads[: pin + 1], E[: pin + 1], mu, weight, span)
    right = _reparam_segment(beads[pin:], E[pin:], mu, weight, span)
    return left + right[1:]


def _ridge_refine(beads, E, mu, rho, p):
    """Move the top bead to the energy maximum along its two adjacent string segments.

    Without this the two beads straddling the ridge can slide down opposite sides and
    the bead maximum drops below the true maximum along the string.
    """
    k = int(np.argmax(E))
    n = len(beads)
    if k in (0, n - 1):
        return beads, E
    best_e, best_b = float(E[k]), None
    for j in (k - 1, k + 1):
        if not 0 <= j < n:
            continue
        a, b = beads[k].values, beads[j].values
        mesh = beads[k].mesh

        def point(f):
            return project_mass(GridFunction(mesh, (1 - f) * a + f * b), mu)

        r = optimize.minimize_scalar(lambda f: -energy(point(f), rho, p), bounds=(0.0, 1.0),
                                     method="bounded", options=dict(xatol=1e-4))
        if -r.fun > best_e:
            best_e, best_b = -r.fun, point(r.x)
    if best_b is None:
        return beads, E
    beads = list(beads)
    beads[k] = best_b
    E = E.copy()
    E[k] = best_e
    return beads, E


@dataclass
class RelaxResult:
    path: PathOnSphere
    level: float
    argmax: int
    initial_level: float
    history: list
    stalled: bool


def minmax_relax(path, cfg=None):
    """String-method relaxation; endpoints untouched, max energy never increases.

    The tracked max is the ridge-refined one, so ``initial_level`` can sit slightly
    above the bead maximum of the input path.
    """
    cfg = cfg or MPConfig(p=path.p)
    if not all(check_endpoints(path)):
        raise InvalidParameter("minmax_relax needs a path with verified endpoints")
    mu, rho, p = path.mu, path.rho, path.p
    beads = list(path.beads)
    E = np.array([energy(b, rho, p) for b in beads])
    beads, E = _ridge_refine(beads, E, mu, rho, p)
    best = float(E.max())
    history = [best]
    step = cfg.step
    stalled = False
    for it in range(cfg.relax_iters):
        for attempt in range(cfg.max_backoff + 1):
            # beads already below both endpoint energies cannot carry the max; freezing them
            # stops the collapse branch (E -> -inf) from draining arclength off the ridge
            floor = max(E[0], E[-1])
            trial = [beads[0]] + [_descend(b, mu, rho, p, step) if e > floor else b
                                  for b, e in zip(beads[1:-1], E[1:-1])] + [beads[-1]]
            Et = np.array([energy(b, rho, p) for b in trial])
            trial, Et = _ridge_refine(trial, Et, mu, rho, p)
            trial = _reparametrize(trial, Et, mu, cfg.reparam_weight, int(np.argmax(Et)))
            Et = np.array([energy(b, rho, p) for b in trial])
            trial, Et = _ridge_refine(trial, Et, mu, rho, p)
            if Et.max() <= best * (1 + 1e-12) + 1e-300:
                break
            step *= 0.5
        else:
            stalled = True
            break
        beads, E = trial, Et
        best = float(E.max())
        history.append(best)
    k = int(np.argmax(E))
    out = PathOnSphere(beads, mu, rho, p, None, path.delta, path.kind + "+relaxed",
                       dict(path.meta))
    return RelaxResult(out, best, k, history[0], history, stalled)
