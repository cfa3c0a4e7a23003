import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from graphnls.errors import InvalidGraph, InvalidParameter, UnsupportedTopology
from graphnls.metric_graph import (MetricGraph, build_standard, classify, graph_from_dict,
                                   graph_to_dict, load_graph, min_edge_length, save_graph)


def test_star6_shape():
    g = build_standard("star", 6)
    assert len(g.vertices) == 1 and len(g.halflines) == 6 and not g.finite_edges


def test_tadpole_shape():
    g = build_standard("tadpole", 2.0)
    assert len(g.vertices) == 1 and len(g.halflines) == 1
    assert len(g.finite_edges) == 1 and g.is_loop(0) and g.finite_edges[0][2] == 2.0
    assert g.degree(g.vertices[0]) == 3  # loop counts twice


def test_line_shape():
    g = build_standard("line")
    assert len(g.vertices) == 1 and g.degree(g.vertices[0]) == 2 and len(g.halflines) == 2


@pytest.mark.parametrize("kind,args", [("star", (1,)), ("tadpole", (0.0,)), ("tgraph", (-1.0,)),
                                       ("ladder", (1.0, 1.0, 0)), ("signpost", (1.0, -2.0, 1))])
def test_build_rejects_bad_parameters(kind, args):
    with pytest.raises(InvalidParameter):
        build_standard(kind, *args)


def test_classify_examples():
    assert classify(build_standard("line")).satisfies_H
    assert classify(build_standard("star", 6)).satisfies_H
    t = classify(build_standard("tadpole", 2.0))
    assert not t.satisfies_H and t.has_signpost
    tg = classify(build_standard("tgraph", 1.0))
    assert tg.every_vertex_even_halflines and tg.has_pendant


def test_min_edge_length_examples():
    assert min_edge_length(build_standard("tadpole", 2.0)) == 2.0
    assert min_edge_length(build_standard("ladder", 1.0, 0.5, 4)) == 0.5
    assert min_edge_length(build_standard("star", 6)) == math.inf


def test_pendant_signpost_independent():
    s = classify(build_standard("signpost", 1.0, 1.0, 1))
    assert s.has_signpost and not s.has_pendant
    t = classify(build_standard("tgraph", 1.0))
    assert t.has_pendant and not t.has_signpost


@pytest.mark.parametrize("kind,args", [("line", ()), ("halfline", ()), ("star", (3,)),
                                       ("tadpole", (2.0,)), ("tgraph", (1.0,)),
                                       ("signpost", (1.0, 2.0, 1)), ("ladder", (1.0, 1.0, 3))])
def test_report_invariants(kind, args):
    r = classify(build_standard(kind, *args))
    if r.satisfies_H:
        assert r.n_halflines >= 2
    if r.n_halflines <= 1:
        assert not r.satisfies_H


def test_ladder_structure():
    g = build_standard("ladder", 1.0, 0.5, 4)
    # 2 rails of 4 cells + 5 rungs, 4 caps
    assert len(g.finite_edges) == 2 * 4 + 5 and len(g.halflines) == 4
    assert classify(g).satisfies_H
    d = build_standard("ladder", 1.0, 0.5, 4, caps="dirichlet")
    assert not d.halflines and len(d.dirichlet) == 4


def test_ladder_dirichlet_rejects_h_test():
    with pytest.raises(UnsupportedTopology):
        classify(build_standard("ladder", 1.0, 1.0, 2, caps="dirichlet"))


def test_invalid_graphs():
    with pytest.raises(InvalidGraph):
        MetricGraph(["a", "b"], [], ["a"])  # b isolated
    with pytest.raises(InvalidGraph):
        MetricGraph(["a", "b"], [("a", "b", 0.0)], [])
    with pytest.raises(InvalidGraph):
        MetricGraph(["a"], [("a", "z", 1.0)], [])


def test_parallel_edges_and_loops_allowed():
    g = MetricGraph(["a", "b"], [("a", "b", 1.0), ("a", "b", 2.0), ("b", "b", 1.5)], ["a"])
    assert g.degree("b") == 4


def test_json_roundtrip(tmp_path):
    g = build_standard("signpost", 1.0, 2.0, 2)
    f = tmp_path / "g.json"
    save_graph(g, f)
    h = load_graph(f)
    assert graph_to_dict(h) == graph_to_dict(g)
    spec_style = {"vertices": ["a", "b"], "edges": [{"u": "a", "v": "b", "len": 1.5},
                                                   {"u": "a", "v": "a", "len": 2.0}],
                  "halflines": ["b", "b"]}
    g2 = graph_from_dict(spec_style)
    assert g2.halflines == ("b", "b") and g2.degree("a") == 3


def test_loader_reports_violation(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"vertices": ["a"], "edges": [{"u": "a", "v": "a", "len": -1}],
                             "halflines": []}))
    with pytest.raises(InvalidGraph, match="length"):
        load_graph(f)


GRAPHS = [build_standard("star", 3), build_standard("tadpole", 2.0), build_standard("tgraph", 1.0),
          build_standard("signpost", 1.0, 2.0, 1), build_standard("ladder", 1.0, 0.7, 3),
          MetricGraph(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)], ["a", "b"])]


def _permuted(g, rng):
    names = list(g.vertices)
    new = [f"v{i}" for i in range(len(names))]
    rng.shuffle(new)
    mapping = dict(zip(names, new))
    edges = [(mapping[b], mapping[a], ln) if rng.random() < 0.5 else (mapping[a], mapping[b], ln)
             for a, b, ln in g.finite_edges]
    rng.shuffle(edges)
    hl = [mapping[h] for h in g.halflines]
    rng.shuffle(hl)
    verts = [mapping[v] for v in names]
    rng.shuffle(verts)
    return MetricGraph(verts, edges, hl, g.name)


@given(st.integers(0, len(GRAPHS) - 1), st.integers(0, 10**6))
def test_classify_relabel_invariant(i, seed):
    g = GRAPHS[i]
    h = _permuted(g, random.Random(seed))
    assert classify(h) == classify(g)
    assert min_edge_length(h) == min_edge_length(g)
