"""P1 finite elements on metric graphs.

Every edge carries its own 1-D grid; grid nodes sitting on a graph vertex are one
global unknown shared by all incident edge-ends, so continuity is built in and the
Kirchhoff condition is the natural boundary condition of the weak form.  Half-lines
are truncated to [0, L] with a homogeneous Dirichlet value at L.

Edges are numbered in a unified way: finite edges first (in graph order), then
half-lines.  A finite edge (a, b, len) runs from a (x = 0) to b (x = len); a half-line
runs from its vertex (x = 0) to the truncation point (x = L).

Meshes may be graded towards a set of focus points (edge_id, x): the local target
size is ``min(h_max, h_min + grading * d)`` where d is the graph distance to the
nearest focus.  Node positions are kept as (anchor, offset) pairs so that offsets
from a focus stay exact even when elements are far below the spacing of floats near
the anchor coordinate.
"""

from __future__ import annotations

import heapq
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CannotProject, InvalidParameter, MeshTooCoarse, NumericalFailure
from .metric_graph import MetricGraph, graph_from_dict, graph_to_dict, min_edge_length

# 3-point Gauss-Legendre on [0, 1]
_GX = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GW = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass
class EdgeMesh:
    edge_id: int
    length: float  # inf for half-lines (the truncated length is x[-1])
    h: np.ndarray  # element lengths, exact
    anchor: np.ndarray  # node position = anchor + offset
    offset: np.ndarray
    gidx: np.ndarray  # global unknown per node, -1 on Dirichlet nodes

    @property
    def x(self):
        return self.anchor + self.offset

    @property
    def n_elements(self):
        return len(self.h)


def _march(a, b, da, db, h_max, h_min, grading):
    """Element lengths on [a, b] graded by distance, marching in from both ends."""
    span = b - a
    if not (grading > 0 and h_min < h_max) or min(da, db) * grading + h_min >= h_max:
        n = max(1, math.ceil(span / h_max - 1e-9))
        return np.full(n, span / n), None
    left, right = [], []
    sl = sr = 0.0
    while True:
        hl = min(h_max, h_min + grading * (da + sl))
        hr = min(h_max, h_min + grading * (db + sr))
        step = min(hl, hr)
        if sl + sr + step > span:
            break
        if hl <= hr:
            left.append(hl)
            sl += hl
        else:
            right.append(hr)
            sr += hr
    gap = span - sl - sr
    nxt = min(min(h_max, h_min + grading * (da + sl)), min(h_max, h_min + grading * (db + sr)))
    mid = []
    if gap > 0.3 * nxt:
        mid = [gap]
    elif left and (not right or left[-1] >= right[-1]):
        left[-1] += gap
    elif right:
        right[-1] += gap
    else:
        mid = [gap]
    return np.array(left, float), (np.array(mid, float), np.array(right, float))


def _segment_nodes(lo, hi, seg, nl):
    """Anchors/offsets of the nodes closing each element of a segment.

    Nodes in the first ``nl`` elements are measured from lo, the rest from hi.
    """
    n = len(seg)
    i = np.arange(1, n + 1)
    csum = np.cumsum(seg)
    remaining = np.append(np.cumsum(seg[::-1])[::-1], 0.0)[i]
    from_lo = i < nl
    return np.where(from_lo, lo, hi), np.where(from_lo, csum, -remaining)


class Mesh:
    """Per-edge grids glued at vertices, with cached P1 operators."""

    def __init__(self, graph: MetricGraph, h_max, L=None, foci=(), h_min=None, grading=0.05):
        if not h_max > 0:
            raise InvalidParameter(f"h_max must be positive, got {h_max}")
        e0 = min_edge_length(graph)
        if h_max >= e0 / 2:
            raise MeshTooCoarse(f"h_max={h_max} must be below half the shortest edge ({e0})")
        if graph.halflines and not (L is not None and L > 0):
            raise InvalidParameter("truncation length L > 0 required for half-lines")
        foci = tuple((int(e), float(x)) for e, x in foci)
        if foci and not (h_min is not None and 0 < h_min < h_max):
            raise InvalidParameter("graded meshes need 0 < h_min < h_max")
        self.graph = graph
        self.h_max = float(h_max)
        self.L = float(L) if L is not None else None
        self.foci = foci
        self.h_min = h_min
        self.grading = grading
        self._build()

    # -- construction --------------------------------------------------------

    def _edge_span(self, k):
        g = self.graph
        m = len(g.finite_edges)
        if k < m:
            a, b, ln = g.finite_edges[k]
            return a, b, ln
        return g.halflines[k - m], None, self.L

    def _vertex_distances(self):
        g = self.graph
        dist = {v: math.inf for v in g.vertices}
        for e, x in self.foci:
            a, b, ln = self._edge_span(e)
            dist[a] = min(dist[a], x)
            if b is not None:
                dist[b] = min(dist[b], ln - x)
        heap = [(d, v) for v, d in dist.items() if d < math.inf]
        heapq.heapify(heap)
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist[v]:
                continue
            for a, b, ln in g.finite_edges:
                for s, t in ((a, b), (b, a)):
                    if s == v and d + ln < dist[t]:
                        dist[t] = d + ln
                        heapq.heappush(heap, (d + ln, t))
        return dist

    def _build(self):
        g = self.graph
        vdist = self._vertex_distances() if self.foci else None
        vertex_index = {}
        for v in g.vertices:
            if v not in g.dirichlet:
                vertex_index[v] = len(vertex_index)
        n = len(vertex_index)
        edges = []
        for k in range(g.n_edges):
            a, b, ln = self._edge_span(k)
            if ln <= 0:
                raise InvalidParameter(f"edge {k} has no extent")
            marks = sorted({x for e, x in self.foci if e == k})
            for x in marks:
                if not 0 <= x <= ln:
                    raise InvalidParameter(f"focus {x} outside edge {k} of length {ln}")
            pts = sorted({0.0, ln, *marks})
            hs, anchors, offsets = [], [np.array([0.0])], [np.array([0.0])]
            for i in range(len(pts) - 1):
                lo, hi = pts[i], pts[i + 1]
                if self.foci:
                    dl = 0.0 if lo in marks else (vdist[a] if lo == 0.0 else math.inf)
                    if hi in marks:
                        dr = 0.0
                    elif b is not None and hi == ln:
                        dr = vdist[b]
                    else:
                        dr = math.inf  # truncation end of a half-line
                    dl = min(dl, dr + (hi - lo))
                    dr = min(dr, dl + (hi - lo))
                    left, rest = _march(lo, hi, dl, dr, self.h_max, self.h_min, self.grading)
                else:
                    left, rest = _march(lo, hi, 0, 0, self.h_max, None, 0)
                if rest is None:
                    seg, nl = left, len(left)
                else:
                    mid, right = rest
                    seg = np.concatenate([left, mid, right[::-1]])
                    nl = len(left) + len(mid)
                hs.append(seg)
                an, of = _segment_nodes(lo, hi, seg, nl)
                anchors.append(an)
                offsets.append(of)
            h = np.concatenate(hs)
            anchor = np.concatenate(anchors)
            offset = np.concatenate(offsets)
            gidx = np.empty(len(h) + 1, dtype=np.int64)
            gidx[1:-1] = np.arange(n, n + len(h) - 1)
            n += len(h) - 1
            gidx[0] = vertex_index.get(a, -1)
            if b is None:
                gidx[-1] = -1
            else:
                gidx[-1] = vertex_index.get(b, -1)
            edges.append(EdgeMesh(k, g.edge_length(k), h, anchor, offset, gidx))
        self.edges = edges
        self.vertex_index = vertex_index
        self.n = n
        self.n_elements = sum(e.n_elements for e in edges)
        ei = np.concatenate([e.gidx[:-1] for e in edges])
        ej = np.concatenate([e.gidx[1:] for e in edges])
        self._ei = np.where(ei < 0, n, ei)  # Dirichlet nodes read a padded zero
        self._ej = np.where(ej < 0, n, ej)
        self._eh = np.concatenate([e.h for e in edges])

    # -- operators -------------------------------------------------------------

    @cached_property
    def stiffness(self):
        return self._assemble(1.0 / self._eh, -1.0 / self._eh)

    @cached_property
    def mass(self):
        return self._assemble(self._eh / 3.0, self._eh / 6.0)

    def _assemble(self, diag, off):
        i, j = self._ei, self._ej
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        vals = np.concatenate([diag, diag, off, off])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(self.n + 1, self.n + 1)).tocsr()
        return A[: self.n, : self.n].tocsc()

    @cached_property
    def mass_lu(self):
        return spla.splu(self.mass)

    @property
    def h_min_actual(self):
        return float(self._eh.min())

    @property
    def h_max_actual(self):
        return float(self._eh.max())

    def params(self):
        return dict(h_max=self.h_max, L=self.L, foci=[list(f) for f in self.foci],
                    h_min=self.h_min, grading=self.grading)

    def node_positions(self):
        """(edge_id, local x) of one representative per global unknown."""
        ids = np.full(self.n, -1)
        xs = np.zeros(self.n)
        for e in self.edges:
            x = e.x
            for loc, gi in enumerate(e.gidx):
                if gi >= 0 and ids[gi] < 0:
                    ids[gi] = e.edge_id
                    xs[gi] = x[loc]
        return ids, xs

    # -- element-level nonlinear terms ---------------------------------------

    def _gauss_values(self, u):
        ue = np.append(u, 0.0)
        a, b = ue[self._ei], ue[self._ej]
        return a[:, None] * (1 - _GX) + b[:, None] * _GX  # (n_el, 3)

    def lpp(self, u, p):
        uq = np.abs(self._gauss_values(u))
        return float(np.sum(self._eh * (uq**p @ _GW)))

    def load(self, u, p):
        """Vector b_i = int |u|^{p-2} u phi_i, the derivative of lpp/p."""
        uq = self._gauss_values(u)
        f = np.abs(uq) ** (p - 2) * uq * _GW * self._eh[:, None]
        bi = f @ (1 - _GX)
        bj = f @ _GX
        out = np.bincount(self._ei, bi, self.n + 1) + np.bincount(self._ej, bj, self.n + 1)
        return out[: self.n]

    def load_jacobian(self, u, p):
        """Matrix of int (p-1)|u|^{p-2} phi_i phi_j."""
        uq = self._gauss_values(u)
        w = (p - 1) * np.abs(uq) ** (p - 2) * _GW * self._eh[:, None]
        dii = w @ ((1 - _GX) ** 2)
        djj = w @ (_GX**2)
        dij = w @ ((1 - _GX) * _GX)
        i, j = self._ei, self._ej
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        vals = np.concatenate([dii, djj, dij, dij])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(self.n + 1, self.n + 1)).tocsr()
        return A[: self.n, : self.n]

    # -- sampling -----------------------------------------------------------------

    def sample(self, func):
        """Nodal interpolant of ``func(edge_id, anchor, offset) -> values``."""
        u = np.zeros(self.n)
        seen = np.zeros(self.n, bool)
        for e in self.edges:
            vals = np.asarray(func(e.edge_id, e.anchor, e.offset), float)
            vals = np.broadcast_to(vals, e.anchor.shape)
            m = (e.gidx >= 0) & ~seen[np.maximum(e.gidx, 0)]
            u[e.gidx[m]] = vals[m]
            seen[e.gidx[m]] = True
        return GridFunction(self, u)

    def distance_from(self, edge_id, x0):
        """Per-edge arrays of graph distance to the point (edge_id, x0).

        On the carrying edge the distance uses the stored offsets, so it stays exact
        when x0 is a focus/breakpoint of the mesh.
        """
        g = self.graph
        a0, b0, ln0 = self._edge_span(edge_id)
        dv = {v: math.inf for v in g.vertices}
        dv[a0] = x0
        if b0 is not None:
            dv[b0] = min(dv[b0], ln0 - x0)
        heap = [(d, v) for v, d in dv.items() if d < math.inf]
        heapq.heapify(heap)
        while heap:
            d, v = heapq.heappop(heap)
            if d > dv[v]:
                continue
            for a, b, ln in g.finite_edges:
                for s, t in ((a, b), (b, a)):
                    if s == v and d + ln < dv[t]:
                        dv[t] = d + ln
                        heapq.heappush(heap, (d + ln, t))
        out = []
        for e in self.edges:
            a, b, ln = self._edge_span(e.edge_id)
            x = e.x
            d = dv[a] + x
            if b is not None:
                d = np.minimum(d, dv[b] + (ln - x))
            if e.edge_id == edge_id:
                direct = np.where(e.anchor == x0, np.abs(e.offset), np.abs((e.anchor - x0) + e.offset))
                d = np.minimum(d, direct)
            out.append(d)
        return out

    def sample_radial(self, edge_id, x0, f):
        """Nodal values of f(distance to (edge_id, x0))."""
        dist = self.distance_from(edge_id, x0)
        return self.sample(lambda k, an, of: f(dist[k]))

    def constant(self, c):
        return GridFunction(self, np.full(self.n, float(c)))

    def zero(self):
        return GridFunction(self, np.zeros(self.n))


def build_mesh(g, h_max, L=None, foci=(), h_min=None, grading=0.05):
    return Mesh(g, h_max, L, foci, h_min, grading)


def default_truncation(lam_expected):
    return max(30.0, 12.0 / math.sqrt(lam_expected)) if lam_expected > 0 else 30.0


@dataclass
class GridFunction:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n,):
            raise InvalidParameter("nodal vector does not match mesh")
        if not np.all(np.isfinite(self.values)):
            raise NumericalFailure("grid function has non-finite values")

    def __mul__(self, c):
        return GridFunction(self.mesh, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        return GridFunction(self.mesh, self.values + _vals(other))

    def __sub__(self, other):
        return GridFunction(self.mesh, self.values - _vals(other))

    def __neg__(self):
        return GridFunction(self.mesh, -self.values)

    def copy(self):
        return GridFunction(self.mesh, self.values.copy())

    def on_edge(self, k):
        """(x, values) along unified edge k, Dirichlet nodes included."""
        e = self.mesh.edges[k]
        ue = np.append(self.values, 0.0)
        return e.x, ue[np.where(e.gidx < 0, self.mesh.n, e.gidx)]


def _vals(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u, float)


def _mesh_of(u, mesh=None):
    if isinstance(u, GridFunction):
        return u.mesh
    if mesh is None:
        raise InvalidParameter("a mesh is required for raw nodal vectors")
    return mesh


@dataclass(frozen=True)
class Norms:
    l2sq: float
    lpp: float
    gradsq: float
    sup: float


def norms(u, p, mesh=None):
    if not p > 2:
        raise InvalidParameter(f"p must exceed 2, got {p}")
    m = _mesh_of(u, mesh)
    v = _vals(u)
    return Norms(float(v @ (m.mass @ v)), m.lpp(v, p), float(v @ (m.stiffness @ v)),
                 float(np.max(np.abs(v))) if v.size else 0.0)


def mass(u, mesh=None):
    m = _mesh_of(u, mesh)
    v = _vals(u)
    return float(v @ (m.mass @ v))


def energy(u, rho, p, mesh=None):
    m = _mesh_of(u, mesh)
    v = _vals(u)
    return 0.5 * float(v @ (m.stiffness @ v)) - rho / p * m.lpp(v, p)


def weak_gradient(v, rho, p, m):
    """Dual vector K u - rho b(u)."""
    return m.stiffness @ v - rho * m.load(v, p)


def energy_gradient(u, rho, p, mesh=None):
    m = _mesh_of(u, mesh)
    v = _vals(u)
    return GridFunction(m, m.mass_lu.solve(weak_gradient(v, rho, p, m)))


def pde_residual(u, lam, rho, p, mesh=None):
    """Mass norm of the Riesz representative of K u + lam M u - rho b(u)."""
    m = _mesh_of(u, mesh)
    v = _vals(u)
    r = m.stiffness @ v + lam * (m.mass @ v) - rho * m.load(v, p)
    return math.sqrt(max(float(r @ m.mass_lu.solve(r)), 0.0))


def residual_scale(u, lam, rho, p, mesh=None):
    """Size of the individual terms, used to report a relative residual."""
    m = _mesh_of(u, mesh)
    v = _vals(u)
    b = m.load(v, p)
    lin = abs(lam) * math.sqrt(max(float(v @ (m.mass @ v)), 0.0))
    return lin + rho * math.sqrt(max(float(b @ m.mass_lu.solve(b)), 0.0))


def project_mass(u, mu, mesh=None):
    if not mu > 0:
        raise InvalidParameter(f"mu must be positive, got {mu}")
    m = _mesh_of(u, mesh)
    v = _vals(u)
    l2 = float(v @ (m.mass @ v))
    if not l2 > 0:
        raise CannotProject("cannot rescale the zero function to positive mass")
    return GridFunction(m, v * math.sqrt(mu / l2))


def lambda_bottom(mesh, maxiter=5000, tol=1e-12):
    """Smallest generalized eigenvalue of (stiffness, mass)."""
    K, M = mesh.stiffness, mesh.mass
    if mesh.n <= 400:
        w = scipy.linalg.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(w[0])
    scale = 1.0 / mesh.h_max_actual  # any negative shift keeps K - sigma M definite
    try:
        w = spla.eigsh(K, k=1, M=M, sigma=-scale, which="LM", maxiter=maxiter, tol=tol,
                       return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NumericalFailure(f"eigen-iteration did not converge: {exc}") from exc
    return float(w[0])


# --- CSV serialization ------------------------------------------------------

def to_csv(u, extra=None):
    m = u.mesh
    header = {"graph": graph_to_dict(m.graph), "mesh": m.params()}
    if extra:
        header.update(extra)
    buf = io.StringIO()
    buf.write("# " + json.dumps(header) + "\n")
    buf.write("edge_id,local_coordinate,value\n")
    for k in range(len(m.edges)):
        x, vals = u.on_edge(k)
        for xi, vi in zip(x, vals):
            buf.write(f"{k},{xi:.17g},{vi:.17g}\n")
    return buf.getvalue()


def save_csv(u, path, extra=None):
    with open(path, "w") as fh:
        fh.write(to_csv(u, extra))


def load_csv(path, mesh=None):
    """Read a grid function; the mesh is rebuilt from the JSON header unless given."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise InvalidParameter(f"{path}: missing JSON header line")
        header = json.loads(first[1:])
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    if mesh is None:
        mp = header["mesh"]
        mesh = Mesh(graph_from_dict(header["graph"]), mp["h_max"], mp["L"],
                    [tuple(f) for f in mp["foci"]], mp["h_min"], mp["grading"])
    u = np.zeros(mesh.n)
    row = 0
    for e in mesh.edges:
        block = data[row: row + len(e.gidx)]
        if len(block) != len(e.gidx) or np.any(block[:, 0] != e.edge_id):
            raise InvalidParameter(f"{path}: rows do not match mesh on edge {e.edge_id}")
        keep = e.gidx >= 0
        u[e.gidx[keep]] = block[keep, 2]
        row += len(e.gidx)
    return GridFunction(mesh, u), header
