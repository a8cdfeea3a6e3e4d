import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventcausal.examples import confounded_treatment_graph, hpv_graph, three_process_graph
from eventcausal.graph import (
    GraphFormatError,
    GraphValidationError,
    UnknownNodeError,
    ancestors,
    build_graph,
    children,
    descendants,
    from_text,
    graph_from_dict,
    graph_to_dict,
    induced_subgraph,
    parents,
    to_text,
)


def rules_of(nodes, edges):
    with pytest.raises(GraphValidationError) as info:
        build_graph(nodes, edges)
    return info.value.rules


def test_hpv_graph_is_valid():
    g = hpv_graph()
    assert len(g.node_ids) == 8
    assert len(g.edges) == 13
    assert not g.children("Censoring")


def test_baseline_two_cycle():
    assert rules_of([("A", "baseline"), ("B", "baseline")], [("A", "B"), ("B", "A")]) == ["BaselineCycle"]


def test_process_to_baseline_rejected():
    assert rules_of([("A", "baseline"), ("N", "process")], [("N", "A")]) == ["ProcessToBaselineEdge"]


def test_process_double_edge_allowed():
    g = build_graph([("N1", "process"), ("N2", "process")], [("N1", "N2"), ("N2", "N1")])
    assert len(g.edges) == 2


def test_all_violations_reported():
    nodes = [("A", "baseline"), ("A", "baseline"), ("N", "process", ["censoring"]),
             ("M", "process", ["censoring"]), ("", "process"), ("Q", "neither")]
    edges = [("N", "A"), ("A", "Z"), ("M", "M"), ("A", "N"), ("A", "N")]
    assert set(rules_of(nodes, edges)) == {
        "DuplicateNode", "InvalidNodeId", "InvalidKind", "ProcessToBaselineEdge",
        "UnknownEndpoint", "SelfLoop", "DuplicateEdge", "MultipleCensoringNodes",
    }


def test_censoring_must_be_process():
    assert "CensoringNotProcess" in rules_of([("C", "baseline", ["censoring"])], [])


def test_unknown_role():
    assert "InvalidRole" in rules_of([("C", "process", ["mystery"])], [])


def test_parents_in_three_process_graph():
    assert parents(three_process_graph(), "N2") == {"N1", "N3"}


def test_isolated_node_has_empty_relatives():
    g = build_graph([("A", "process"), ("B", "process")], [])
    for fn in (parents, children, ancestors, descendants):
        assert fn(g, "A") == frozenset()


def test_descendants_of_u3_in_confounded_graph():
    assert descendants(confounded_treatment_graph(), "U3") == {"Nc"}


def test_descendants_include_self_only_through_cycle():
    g = three_process_graph()
    assert "N1" in descendants(g, "N1")
    g2 = build_graph([("A", "baseline"), ("N", "process")], [("A", "N")])
    assert "A" not in descendants(g2, "A")


def test_unknown_node():
    with pytest.raises(UnknownNodeError):
        parents(three_process_graph(), "nope")
    with pytest.raises(UnknownNodeError):
        induced_subgraph(three_process_graph(), ["N1", "nope"])


def test_induced_subgraph_of_confounded_graph():
    sub = induced_subgraph(confounded_treatment_graph(), ["Nx", "Ny", "L"])
    assert sub.edges == {("Nx", "Ny"), ("Nx", "L"), ("L", "Ny"), ("L", "Nx")}


def test_induced_subgraph_trivial_cases(example_graph):
    assert induced_subgraph(example_graph, example_graph.node_ids) == example_graph
    empty = induced_subgraph(example_graph, [])
    assert empty.node_ids == () and not empty.edges


def test_unknown_keys_rejected():
    data = graph_to_dict(three_process_graph())
    data["extra"] = 1
    with pytest.raises(GraphFormatError):
        graph_from_dict(data)
    data = graph_to_dict(three_process_graph())
    data["nodes"][0]["colour"] = "red"
    with pytest.raises(GraphFormatError):
        graph_from_dict(data)


def test_roundtrip_examples(example_graph):
    assert graph_from_dict(json.loads(json.dumps(graph_to_dict(example_graph)))) == example_graph
    assert from_text(to_text(example_graph)) == example_graph


# -- property tests --------------------------------------------------------------

NAMES = ["A", "B", "C", "N1", "N2", "N3", "N4"]


@st.composite
def raw_graphs(draw):
    nodes = [(v, draw(st.sampled_from(["baseline", "process", "bogus"]))) for v in
             draw(st.lists(st.sampled_from(NAMES), max_size=8))]
    edges = draw(st.lists(st.tuples(st.sampled_from(NAMES + ["Z"]), st.sampled_from(NAMES + ["Z"])), max_size=12))
    return nodes, edges


def expected_rules(nodes, edges):
    """Independent restatement of the structural rules."""
    rules = set()
    kinds = {}
    for v, k in nodes:
        if k == "bogus":
            rules.add("InvalidKind")
        elif v in kinds:
            rules.add("DuplicateNode")
        else:
            kinds[v] = k
    seen = set()
    base_edges = set()
    for u, v in edges:
        if u not in kinds or v not in kinds:
            rules.add("UnknownEndpoint")
        elif u == v:
            rules.add("SelfLoop")
        elif (u, v) in seen:
            rules.add("DuplicateEdge")
        else:
            seen.add((u, v))
            if kinds[u] == "process" and kinds[v] == "baseline":
                rules.add("ProcessToBaselineEdge")
            if kinds[u] == kinds[v] == "baseline":
                base_edges.add((u, v))
    # cycle detection by repeated removal of sources
    remaining = {v for v, k in kinds.items() if k == "baseline"}
    while True:
        sources = {v for v in remaining if not any(e[1] == v and e[0] in remaining for e in base_edges)}
        if not sources:
            break
        remaining -= sources
    if remaining:
        rules.add("BaselineCycle")
    return rules


@settings(max_examples=300, deadline=None)
@given(raw_graphs())
def test_validation_reports_every_violation(raw):
    nodes, edges = raw
    want = expected_rules(nodes, edges)
    try:
        build_graph(nodes, edges)
        got = set()
    except GraphValidationError as exc:
        got = set(exc.rules)
    assert got == want


@st.composite
def valid_graphs(draw):
    kinds = {v: ("baseline" if v in "ABC" else "process") for v in NAMES}
    order = {v: i for i, v in enumerate(NAMES)}
    pairs = [(u, v) for u in NAMES for v in NAMES if u != v
             and not (kinds[u] == "process" and kinds[v] == "baseline")
             and not (kinds[u] == kinds[v] == "baseline" and order[u] > order[v])]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=15))
    return build_graph([(v, k) for v, k in kinds.items()], edges)


@settings(max_examples=150, deadline=None)
@given(valid_graphs(), st.sets(st.sampled_from(NAMES)))
def test_induced_subgraph_idempotent(g, A):
    once = induced_subgraph(g, A)
    assert induced_subgraph(once, A) == once
    assert once.edges == {e for e in g.edges if e[0] in A and e[1] in A}


@settings(max_examples=150, deadline=None)
@given(valid_graphs())
def test_descendants_transitively_closed(g):
    for v in g.node_ids:
        dv = descendants(g, v)
        for w in dv:
            assert descendants(g, w) <= dv
        for w in dv:
            assert v in ancestors(g, w)


@settings(max_examples=150, deadline=None)
@given(valid_graphs())
def test_serialization_roundtrip(g):
    assert graph_from_dict(graph_to_dict(g)) == g
    assert from_text(to_text(g)) == g
    assert to_text(from_text(to_text(g))) == to_text(g)
