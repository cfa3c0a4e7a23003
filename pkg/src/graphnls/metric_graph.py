"""Metric graphs with finitely many edges and half-lines.

A graph is a multigraph of bounded edges ``(u, v, length)`` (loops and
parallel edges allowed) plus half-lines attached at vertices.  Periodic graphs
are only represented through finite truncations (see :func:`build_standard`
with ``kind="ladder"``), optionally capped by Dirichlet vertices.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidGraph, InvalidParameter, UnsupportedTopology

INF = math.inf


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple
    finite_edges: tuple  # of (u, v, length)
    halflines: tuple  # attachment vertex per half-line
    name: str = ""
    dirichlet: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "finite_edges", tuple(
            (u, v, float(ln)) for u, v, ln in self.finite_edges))
        object.__setattr__(self, "halflines", tuple(self.halflines))
        object.__setattr__(self, "dirichlet", frozenset(self.dirichlet))
        problem = _first_violation(self)
        if problem:
            raise InvalidGraph(problem)

    @property
    def n_edges(self):
        """Unified edge count: finite edges first, then half-lines."""
        return len(self.finite_edges) + len(self.halflines)

    def degree(self, v):
        d = 0
        for a, b, _ in self.finite_edges:
            d += (a == v) + (b == v)
        return d + sum(1 for h in self.halflines if h == v)

    def incident(self, v):
        """Unified ids of edges incident at ``v`` (loops listed once)."""
        out = [k for k, (a, b, _) in enumerate(self.finite_edges) if v in (a, b)]
        m = len(self.finite_edges)
        out += [m + j for j, h in enumerate(self.halflines) if h == v]
        return out

    def is_loop(self, k):
        return k < len(self.finite_edges) and self.finite_edges[k][0] == self.finite_edges[k][1]

    def edge_length(self, k):
        if k < len(self.finite_edges):
            return self.finite_edges[k][2]
        return INF

    @property
    def compact_core_length(self):
        return math.fsum(ln for _, _, ln in self.finite_edges)

    def relabel(self, mapping):
        return MetricGraph(
            [mapping[v] for v in self.vertices],
            [(mapping[a], mapping[b], ln) for a, b, ln in self.finite_edges],
            [mapping[h] for h in self.halflines],
            self.name,
            frozenset(mapping[v] for v in self.dirichlet),
        )


def _first_violation(g):
    verts = set(g.vertices)
    if not g.vertices:
        return "graph has no vertices"
    if len(verts) != len(g.vertices):
        return "duplicate vertex ids"
    for k, (a, b, ln) in enumerate(g.finite_edges):
        if a not in verts or b not in verts:
            return f"edge {k} references unknown vertex"
        if not (ln > 0 and math.isfinite(ln)):
            return f"edge {k} has nonpositive or nonfinite length {ln}"
    for j, h in enumerate(g.halflines):
        if h not in verts:
            return f"half-line {j} references unknown vertex {h!r}"
    for v in g.dirichlet:
        if v not in verts:
            return f"dirichlet vertex {v!r} unknown"
    for v in g.vertices:
        if g.degree(v) < 1:
            return f"vertex {v!r} has degree 0"
    # union-find over finite edges; half-lines hang off a single vertex
    parent = {v: v for v in g.vertices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, _ in g.finite_edges:
        parent[find(a)] = find(b)
    if len({find(v) for v in g.vertices}) != 1:
        return "graph is not connected"
    return None


@dataclass(frozen=True)
class TopologyReport:
    has_pendant: bool
    has_signpost: bool
    n_halflines: int
    every_vertex_even_halflines: bool
    satisfies_H: bool
    compact_core_length: float

    def to_dict(self):
        return dict(self.__dict__)


def build_standard(kind, *args, name=None, caps="halflines"):
    """Build one of the named graphs.

    kinds: line, halfline, star(k), tadpole(loop_len), tgraph(pendant_len),
    signpost(loop_len, stem_len, extra_halflines), ladder(cell_len, rung_len, n_cells),
    interval(length) (compact, used for checks).
    """
    def positive(*xs):
        for x in xs:
            if not (x > 0 and math.isfinite(x)):
                raise InvalidParameter(f"length must be positive, got {x}")

    if kind == "line":
        return MetricGraph(["o"], [], ["o", "o"], name or "line")
    if kind == "halfline":
        return MetricGraph(["o"], [], ["o"], name or "halfline")
    if kind == "star":
        (k,) = args
        if int(k) != k or k < 2:
            raise InvalidParameter(f"star needs k >= 2 half-lines, got {k}")
        return MetricGraph(["o"], [], ["o"] * int(k), name or f"star{int(k)}")
    if kind == "tadpole":
        (loop_len,) = args
        positive(loop_len)
        return MetricGraph(["v"], [("v", "v", loop_len)], ["v"], name or "tadpole")
    if kind == "tgraph":
        (pendant_len,) = args
        positive(pendant_len)
        return MetricGraph(["o", "tip"], [("o", "tip", pendant_len)], ["o", "o"],
                           name or "tgraph")
    if kind == "signpost":
        loop_len, stem_len, extra = args
        positive(loop_len, stem_len)
        if int(extra) != extra or extra < 0:
            raise InvalidParameter("extra_halflines must be a nonnegative integer")
        return MetricGraph(["v", "w"], [("v", "v", loop_len), ("v", "w", stem_len)],
                           ["w"] * int(extra), name or "signpost")
    if kind == "interval":
        (length,) = args
        positive(length)
        return MetricGraph(["a", "b"], [("a", "b", length)], [], name or "interval")
    if kind == "ladder":
        cell_len, rung_len, n_cells = args
        positive(cell_len, rung_len)
        if int(n_cells) != n_cells or n_cells < 1:
            raise InvalidParameter("n_cells must be an integer >= 1")
        n = int(n_cells)
        top = [f"t{i}" for i in range(n + 1)]
        bot = [f"b{i}" for i in range(n + 1)]
        edges = []
        for i in range(n):
            edges.append((top[i], top[i + 1], cell_len))
            edges.append((bot[i], bot[i + 1], cell_len))
        for i in range(n + 1):
            edges.append((top[i], bot[i], rung_len))
        ends = [top[0], bot[0], top[n], bot[n]]
        if caps == "halflines":
            return MetricGraph(top + bot, edges, ends, name or f"ladder{n}")
        if caps == "dirichlet":
            return MetricGraph(top + bot, edges, [], name or f"ladder{n}-dirichlet",
                               frozenset(ends))
        raise InvalidParameter(f"unknown ladder caps {caps!r}")
    raise InvalidParameter(f"unknown graph kind {kind!r}")


def min_edge_length(g):
    """Shortest bounded edge; +inf when the graph has none."""
    if not g.finite_edges:
        return INF
    return min(ln for _, _, ln in g.finite_edges)


def _has_signpost(g):
    # A half-line contains bounded sub-edges, so loop + half-line (tadpole) counts.
    for v in g.vertices:
        inc = g.incident(v)
        loops = [k for k in inc if g.is_loop(k)]
        if loops and len(inc) > len(loops):
            return True
        if len(loops) >= 2:
            return True
    return False


def _has_pendant(g):
    for a, b, _ in g.finite_edges:
        if a != b and (g.degree(a) == 1 or g.degree(b) == 1):
            return True
    return False


def _adjacency(g):
    adj = {v: [] for v in g.vertices}
    for k, (a, b, _) in enumerate(g.finite_edges):
        adj[a].append((k, b))
        if a != b:
            adj[b].append((k, a))
    return adj


def _halflines_at(g):
    at = {v: [] for v in g.vertices}
    m = len(g.finite_edges)
    for j, h in enumerate(g.halflines):
        at[h].append(m + j)
    return at


def _trails_to_halfline(adj, hl_at, start, used):
    """Yield (halfline_id, edges_used) for every trail from ``start`` ending in a half-line."""
    for h in hl_at[start]:
        if h not in used:
            yield h, used
    for k, w in adj[start]:
        if k in used:
            continue
        yield from _trails_to_halfline(adj, hl_at, w, used | {k})


def _edge_on_good_trail(g, adj, hl_at, k):
    m = len(g.finite_edges)
    if k >= m:
        v = g.halflines[k - m]
        for h, _ in _trails_to_halfline(adj, hl_at, v, frozenset({k})):
            return True
        return False
    a, b, _ = g.finite_edges[k]
    for h2, used in _trails_to_halfline(adj, hl_at, b, frozenset({k})):
        for _h1, _ in _trails_to_halfline(adj, hl_at, a, used | {h2}):
            return True
    return False


def satisfies_assumption_h(g):
    """Every edge lies on a trail whose two ends are half-lines (exhaustive DFS)."""
    if g.dirichlet:
        raise UnsupportedTopology("assumption (H) test needs a graph with finitely many "
                                  "edges; Dirichlet-capped truncations stand for periodic graphs")
    if len(g.halflines) <= 1:
        return False
    adj, hl_at = _adjacency(g), _halflines_at(g)
    return all(_edge_on_good_trail(g, adj, hl_at, k) for k in range(g.n_edges))


def classify(g):
    counts = Counter(g.halflines)
    return TopologyReport(
        has_pendant=_has_pendant(g),
        has_signpost=_has_signpost(g),
        n_halflines=len(g.halflines),
        every_vertex_even_halflines=all(counts[v] % 2 == 0 for v in g.vertices),
        satisfies_H=satisfies_assumption_h(g),
        compact_core_length=g.compact_core_length,
    )


def graph_to_dict(g):
    d = {
        "name": g.name,
        "vertices": list(g.vertices),
        "edges": [{"u": a, "v": b, "len": ln} for a, b, ln in g.finite_edges],
        "halflines": list(g.halflines),
    }
    if g.dirichlet:
        d["dirichlet"] = sorted(g.dirichlet)
    return d


def graph_from_dict(d):
    try:
        vertices = [str(v) for v in d["vertices"]]
        edges = [(str(e["u"]), str(e["v"]), float(e["len"])) for e in d.get("edges", [])]
        halflines = [str(h) for h in d.get("halflines", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGraph(f"malformed graph description: {exc}") from exc
    return MetricGraph(vertices, edges, halflines, d.get("name", ""),
                       frozenset(str(v) for v in d.get("dirichlet", [])))


def load_graph(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise InvalidGraph(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidGraph(f"{path}: not valid JSON ({exc})") from exc
    g = graph_from_dict(d)
    if not g.name:
        g = MetricGraph(g.vertices, g.finite_edges, g.halflines, Path(path).stem, g.dirichlet)
    return g


def save_graph(g, path):
    Path(path).write_text(json.dumps(graph_to_dict(g), indent=2) + "\n")
