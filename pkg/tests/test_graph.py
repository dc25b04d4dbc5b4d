from __future__ import annotations

import json
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from temporal_schema.graph import (
    EOG,
    SOG,
    CycleError,
    GraphError,
    IngestWarning,
    add_boundary_nodes,
    dumps_graph,
    ending_events,
    find_cycle,
    graph_from_dict,
    ingest_graph,
    linearize,
    load_corpus,
    prefix_subgraph,
    remove_events,
    strip_arguments,
    structurally_equal,
    validate_graph,
    write_corpus,
)
from temporal_schema.ontology import make_ontology

ONT = make_ontology(
    {
        "Attack": ["Attacker", "Place"],
        "Die": ["Victim", "Place"],
        "Learn": ["Learner"],
        "Purchase": ["Buyer", "Artifact"],
        "Assemble": ["Assembler", "Artifact"],
        "Arrest": ["Detainee"],
    },
    ["Person", "GPE", "Weapon", "Vehicle"],
    ["PartWhole", "Affiliation"],
)


def graph(events, temporal, **extra):
    doc = {
        "graph_id": extra.pop("graph_id", "g"),
        "events": [{"id": i, "type": t} for i, t in events],
        "temporal": [{"before": b, "after": a} for b, a in temporal],
    }
    doc.update(extra)
    return doc


DIAMOND = graph(
    [("e1", "Attack"), ("e2", "Die"), ("e3", "Arrest"), ("e4", "Learn")],
    [("e1", "e2"), ("e1", "e3"), ("e2", "e4"), ("e3", "e4")],
)


def test_two_event_file():
    g = ingest_graph(json.dumps(graph([("e1", "Attack"), ("e2", "Die")], [("e1", "e2")])), ONT)
    assert [e.id for e in g.events] == ["e1", "e2"]
    validate_graph(g, ONT, require_connected=True)


def test_isolated_event_dropped_with_warning():
    doc = graph(
        [("e1", "Attack"), ("e2", "Die"), ("e3", "Arrest")],
        [("e1", "e2")],
        entities=[{"id": "p", "type": "Person"}, {"id": "q", "type": "Person"}],
        arguments=[{"event": "e1", "role": "Attacker", "entity": "p"}, {"event": "e3", "role": "Detainee", "entity": "q"}],
    )
    with pytest.warns(IngestWarning, match="e3"):
        g = ingest_graph(json.dumps(doc), ONT)
    assert [e.id for e in g.events] == ["e1", "e2"]
    # q only filled a role of the dropped event
    assert [v.id for v in g.entities] == ["p"]


def test_lone_event_kept():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        g = ingest_graph(json.dumps(graph([("e1", "Attack")], [])), ONT)
    assert len(g.events) == 1


def test_two_cycle_named():
    doc = graph([("e1", "Attack"), ("e2", "Die")], [("e1", "e2"), ("e2", "e1")])
    with pytest.raises(CycleError) as info:
        ingest_graph(json.dumps(doc), ONT)
    assert info.value.cycle == ["e1", "e2"]


def test_find_cycle_longer():
    assert find_cycle("abcd", [("a", "b"), ("b", "c"), ("c", "a"), ("c", "d")]) == ["a", "b", "c"]
    assert find_cycle("abc", [("a", "b"), ("b", "c")]) is None


@pytest.mark.parametrize(
    "doc, fragment",
    [
        (graph([("e1", "Parade")], []), "unknown event type"),
        (graph([("e1", "Attack")], [], entities=[{"id": "x", "type": "Robot"}],
               arguments=[{"event": "e1", "role": "Attacker", "entity": "x"}]), "unknown entity type"),
        (graph([("e1", "Attack")], [], entities=[{"id": "x", "type": "Person"}],
               arguments=[{"event": "e1", "role": "Victim", "entity": "x"}]), "not an argument role"),
        (graph([("e1", "Attack")], [], arguments=[{"event": "e1", "role": "Attacker", "entity": "nobody"}]), "unknown entity"),
        (graph([("e1", "Attack"), ("e2", "Die")], [("e1", "e2"), ("e1", "e9")]), "unknown event"),
        ({"events": [{"id": "e1"}]}, "missing field"),
    ],
)
def test_ingest_errors(doc, fragment):
    with pytest.raises(GraphError, match=fragment):
        ingest_graph(json.dumps(doc), ONT)


def test_parse_error_byte_offset():
    source = '{"graph_id": "é", oops}'
    with pytest.raises(GraphError) as info:
        ingest_graph(source, ONT)
    assert f"byte offset {source.index('oops') + 1}" in str(info.value)


def test_relations_canonical_and_deduplicated():
    doc = graph(
        [("e1", "Attack"), ("e2", "Die")],
        [("e1", "e2")],
        entities=[{"id": "z", "type": "GPE"}, {"id": "a", "type": "GPE"}],
        arguments=[{"event": "e1", "role": "Place", "entity": "z"}, {"event": "e2", "role": "Place", "entity": "a"}],
        relations=[{"head": "z", "type": "PartWhole", "tail": "a"}, {"head": "a", "type": "PartWhole", "tail": "z"}],
    )
    g = ingest_graph(json.dumps(doc), ONT)
    assert [(r.head, r.type, r.tail) for r in g.relations] == [("a", "PartWhole", "z")]


def test_boundary_empty_graph():
    g = add_boundary_nodes(graph_from_dict(graph([], []), ONT))
    lin = linearize(g)
    assert lin.order == (SOG, EOG)
    assert [(t.before, t.after) for t in g.temporal] == [(SOG, EOG)]


def test_boundary_chain():
    g = graph_from_dict(graph([("e1", "Attack"), ("e2", "Die")], [("e1", "e2")]), ONT)
    b = add_boundary_nodes(g)
    assert {(t.before, t.after) for t in b.temporal} == {(SOG, "e1"), ("e1", "e2"), ("e2", EOG)}
    assert add_boundary_nodes(b) is b


def test_boundary_diamond():
    g = add_boundary_nodes(graph_from_dict(DIAMOND, ONT))
    added = {(t.before, t.after) for t in g.temporal if SOG in (t.before, t.after) or EOG in (t.before, t.after)}
    assert added == {(SOG, "e1"), ("e4", EOG)}


def test_linearize_single_event():
    g = add_boundary_nodes(graph_from_dict(graph([("e1", "Attack")], []), ONT))
    assert linearize(g).order == (SOG, "e1", EOG)


def test_linearize_diamond_index_tiebreak():
    g = add_boundary_nodes(graph_from_dict(DIAMOND, ONT))
    assert linearize(g).order == (SOG, "e1", "e2", "e3", "e4", EOG)


def test_linearize_requires_boundary():
    with pytest.raises(GraphError):
        linearize(graph_from_dict(DIAMOND, ONT))


def test_assemble_after_both_purchases():
    # the vehicle purchase is listed last so index order alone would not place it early
    doc = graph(
        [("learn", "Learn"), ("buy_materials", "Purchase"), ("assemble", "Assemble"), ("attack", "Attack"), ("buy_vehicle", "Purchase")],
        [("learn", "buy_materials"), ("buy_materials", "assemble"), ("buy_vehicle", "assemble"), ("assemble", "attack")],
    )
    order = linearize(add_boundary_nodes(graph_from_dict(doc, ONT))).order
    assert order.index("assemble") > order.index("buy_materials")
    assert order.index("assemble") > order.index("buy_vehicle")


def fig2_graph():
    return graph_from_dict(
        graph(
            [("attack", "Attack"), ("die", "Die"), ("arrest", "Arrest")],
            [("attack", "die"), ("die", "arrest")],
            entities=[{"id": "bomber", "type": "Person"}, {"id": "city", "type": "GPE"}, {"id": "victim", "type": "Person"}],
            arguments=[
                {"event": "attack", "role": "Attacker", "entity": "bomber"},
                {"event": "attack", "role": "Place", "entity": "city"},
                {"event": "die", "role": "Victim", "entity": "victim"},
                {"event": "arrest", "role": "Detainee", "entity": "bomber"},
            ],
        ),
        ONT,
    )


def test_prefix_before_arrest_step():
    lin = linearize(add_boundary_nodes(fig2_graph()))
    prefix = prefix_subgraph(lin, lin.order.index("arrest"))
    assert {e.id for e in prefix.events} == {SOG, "attack", "die"}
    assert {(a.event, a.role, a.entity) for a in prefix.arguments if a.event == "attack"} == {
        ("attack", "Attacker", "bomber"),
        ("attack", "Place", "city"),
    }


def test_prefix_extremes():
    lin = linearize(add_boundary_nodes(fig2_graph()))
    first = prefix_subgraph(lin, 1)
    assert [e.id for e in first.events] == [SOG]
    assert not first.entities and not first.temporal
    assert structurally_equal(prefix_subgraph(lin, len(lin.order)), lin.graph)
    with pytest.raises(IndexError):
        prefix_subgraph(lin, len(lin.order) + 1)


def test_derived_views():
    g = fig2_graph()
    assert ending_events(g) == ["arrest"]
    cut = remove_events(g, ["arrest"])
    assert [e.id for e in cut.events] == ["attack", "die"]
    assert {v.id for v in cut.entities} == {"bomber", "city", "victim"}
    cut2 = remove_events(g, ["attack"])
    assert {v.id for v in cut2.entities} == {"victim", "bomber"}
    bare = strip_arguments(g)
    assert not bare.arguments and not bare.entities and len(bare.temporal) == 2


def test_corpus_round_trip(tmp_path):
    g = fig2_graph()
    write_corpus(tmp_path, {"train": [g], "dev": [], "test": [g]})
    splits = load_corpus(tmp_path, ONT)
    assert structurally_equal(splits["train"][0], g)
    assert splits["dev"] == []


# ---------------------------------------------------------------------------
# properties over random DAGs
# ---------------------------------------------------------------------------

EVENT_TYPES = list(ONT.event_types)


@st.composite
def random_dags(draw, max_events=50):
    n = draw(st.integers(0, max_events))
    # ids are a shuffled labelling so topological order and index order differ
    labels = draw(st.permutations([f"n{k}" for k in range(n)]))
    rank = {labels[k]: k for k in range(n)}
    edges = set()
    if n > 1:
        pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
        edges = {(labels[i], labels[j]) for i, j in pairs if i < j}
    types = draw(st.lists(st.sampled_from(EVENT_TYPES), min_size=n, max_size=n))
    events = sorted(((k, types[rank[k]]) for k in labels), key=lambda kt: int(kt[0][1:]))
    return graph(events, sorted(edges))


def kahn_min_index(events, edges):
    """Quadratic reference: repeatedly emit the lowest-index node with no pending predecessor."""
    remaining = list(events)
    done: list[str] = []
    while remaining:
        ready = [n for n in remaining if all(b in done for b, a in edges if a == n)]
        done.append(ready[0])
        remaining.remove(ready[0])
    return done


@settings(max_examples=60, deadline=None)
@given(random_dags())
def test_linearization_is_topological(doc):
    g = add_boundary_nodes(graph_from_dict(doc, ONT, drop_isolated=False))
    lin = linearize(g)
    pos = {n: k for k, n in enumerate(lin.order)}
    assert lin.order[0] == SOG and lin.order[-1] == EOG
    assert sorted(lin.order) == sorted(e.id for e in g.events)
    for t in g.temporal:
        assert pos[t.before] < pos[t.after]
    edges = [(t.before, t.after) for t in g.temporal]
    assert list(lin.order) == kahn_min_index([e.id for e in g.events], edges)


@settings(max_examples=40, deadline=None)
@given(random_dags(max_events=20))
def test_prefix_growth_is_monotone(doc):
    lin = linearize(add_boundary_nodes(graph_from_dict(doc, ONT, drop_isolated=False)))
    views = lin.step_views
    for small, big in zip(views, views[1:]):
        for part in range(5):
            assert set(small.canonical()[part]) <= set(big.canonical()[part])


@st.composite
def random_instance_docs(draw):
    doc = draw(random_dags(max_events=12))
    entities, arguments = [], []
    for e in doc["events"]:
        for role in ONT.roles(e["type"]):
            if draw(st.booleans()):
                if entities and draw(st.booleans()):
                    entity = draw(st.sampled_from(entities))["id"]
                else:
                    entity = f"v{len(entities)}"
                    entities.append({"id": entity, "type": draw(st.sampled_from(list(ONT.entity_types)))})
                arguments.append({"event": e["id"], "role": role.name, "entity": entity})
    relations = []
    if len(entities) > 1:
        for _ in range(draw(st.integers(0, 4))):
            a, b = draw(st.permutations([v["id"] for v in entities]))[:2]
            relations.append({"head": a, "type": draw(st.sampled_from(list(ONT.relation_types))), "tail": b})
    doc.update(entities=entities, arguments=arguments, relations=relations)
    return doc


@settings(max_examples=60, deadline=None)
@given(random_instance_docs())
def test_ingest_round_trip_idempotent(doc):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IngestWarning)
        once = ingest_graph(json.dumps(doc), ONT)
        twice = ingest_graph(dumps_graph(once), ONT)
    assert structurally_equal(once, twice)
    assert dumps_graph(once) == dumps_graph(twice)


@settings(max_examples=60, deadline=None)
@given(random_instance_docs())
def test_edge_order_in_file_is_irrelevant(doc):
    shuffled = dict(doc)
    for key in ("temporal", "arguments", "relations"):
        shuffled[key] = list(reversed(doc[key]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IngestWarning)
        a, b = ingest_graph(json.dumps(doc), ONT), ingest_graph(json.dumps(shuffled), ONT)
    assert structurally_equal(a, b)
