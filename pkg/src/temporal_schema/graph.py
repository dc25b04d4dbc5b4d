"""Instance and schema graphs: data model, validation, linearization.

Graphs are immutable values.  Node identity inside a graph is its id plus
its position in the event (or entity) list; the position is the node index
used to break ties during linearization.
"""

from __future__ import annotations

import heapq
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .ontology import Ontology

SOG = "[SOG]"
EOG = "[EOG]"
BOUNDARY = (SOG, EOG)


class GraphError(ValueError):
    """Structural or typing violation in a graph."""


class CycleError(GraphError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__(f"temporal cycle detected: {' -> '.join(cycle + cycle[:1])}")


class IngestWarning(UserWarning):
    """Input was repaired during ingestion (isolated events, duplicates...)."""


@dataclass(frozen=True)
class Event:
    id: str
    type: str


@dataclass(frozen=True)
class Entity:
    id: str
    type: str


@dataclass(frozen=True)
class Argument:
    event: str
    role: str
    entity: str


@dataclass(frozen=True)
class Relation:
    head: str
    type: str
    tail: str


@dataclass(frozen=True)
class Temporal:
    before: str
    after: str


@dataclass(frozen=True)
class InstanceGraph:
    graph_id: str
    complex_event_type: str
    events: tuple[Event, ...] = ()
    entities: tuple[Entity, ...] = ()
    arguments: tuple[Argument, ...] = ()
    relations: tuple[Relation, ...] = ()
    temporal: tuple[Temporal, ...] = ()

    # -- convenience views ---------------------------------------------------

    @property
    def event_types(self) -> dict[str, str]:
        return {e.id: e.type for e in self.events}

    @property
    def entity_types(self) -> dict[str, str]:
        return {v.id: v.type for v in self.entities}

    def real_events(self) -> list[Event]:
        return [e for e in self.events if e.id not in BOUNDARY]

    def real_temporal(self) -> list[Temporal]:
        return [t for t in self.temporal if t.before not in BOUNDARY and t.after not in BOUNDARY]

    def successors(self, real_only: bool = True) -> dict[str, list[str]]:
        edges = self.real_temporal() if real_only else self.temporal
        out: dict[str, list[str]] = {e.id: [] for e in self.events}
        for t in edges:
            out[t.before].append(t.after)
        return out

    def predecessors(self, real_only: bool = True) -> dict[str, list[str]]:
        edges = self.real_temporal() if real_only else self.temporal
        out: dict[str, list[str]] = {e.id: [] for e in self.events}
        for t in edges:
            out[t.after].append(t.before)
        return out

    def arguments_of(self, event_id: str) -> list[Argument]:
        return [a for a in self.arguments if a.event == event_id]

    @property
    def has_boundary(self) -> bool:
        ids = {e.id for e in self.events}
        return SOG in ids and EOG in ids

    def canonical(self) -> tuple:
        """Order-free structural key (used for structural equality)."""
        return (
            tuple(sorted((e.id, e.type) for e in self.events)),
            tuple(sorted((v.id, v.type) for v in self.entities)),
            tuple(sorted((a.event, a.role, a.entity) for a in self.arguments)),
            tuple(sorted((r.head, r.type, r.tail) for r in self.relations)),
            tuple(sorted((t.before, t.after) for t in self.temporal)),
        )


@dataclass(frozen=True)
class SchemaGraph(InstanceGraph):
    """Type-level graph, optionally annotated with per-decision probabilities."""

    probabilities: Mapping[str, float] = field(default_factory=dict, compare=False)


def structurally_equal(a: InstanceGraph, b: InstanceGraph) -> bool:
    return a.canonical() == b.canonical()


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------


def canonical_relation(head: str, rel_type: str, tail: str) -> Relation:
    if tail < head:
        head, tail = tail, head
    return Relation(head, rel_type, tail)


def find_cycle(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    """Return one directed cycle (as a node list) or None if the graph is acyclic."""
    nodes = list(nodes)
    order = {n: i for i, n in enumerate(nodes)}
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for b, a in edges:
        succ[b].append(a)
        indeg[a] += 1
    ready = [n for n in nodes if indeg[n] == 0]
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    if seen == len(nodes):
        return None
    # every remaining node has an in-edge from another remaining node; walk
    # predecessors until a node repeats
    remaining = {n for n in nodes if indeg[n] > 0}
    pred: dict[str, list[str]] = {n: [] for n in remaining}
    for b, a in edges:
        if a in remaining and b in remaining:
            pred[a].append(b)
    node = min(remaining, key=order.__getitem__)
    path: list[str] = []
    index: dict[str, int] = {}
    while node not in index:
        index[node] = len(path)
        path.append(node)
        node = min(pred[node], key=order.__getitem__)
    cycle = path[index[node]:]
    cycle.reverse()
    # rotate so the lowest-index node leads
    k = min(range(len(cycle)), key=lambda i: order[cycle[i]])
    return cycle[k:] + cycle[:k]


def validate_graph(
    graph: InstanceGraph,
    ontology: Ontology | None = None,
    *,
    require_connected: bool = False,
) -> None:
    """Check every structural invariant; raise :class:`GraphError` on violation.

    With ``require_connected`` every real event must take part in at least one
    real temporal edge (the training-time convention).
    """
    ids: set[str] = set()
    for node in (*graph.events, *graph.entities):
        if node.id in ids:
            raise GraphError(f"duplicate node id {node.id!r}")
        ids.add(node.id)
    event_types = graph.event_types
    entity_types = graph.entity_types
    if ontology is not None:
        for e in graph.events:
            if e.id in BOUNDARY:
                if e.type != e.id:
                    raise GraphError(f"boundary node {e.id} has type {e.type!r}")
            elif not ontology.has_event_type(e.type):
                raise GraphError(f"unknown event type {e.type!r} on {e.id}")
        for v in graph.entities:
            if not ontology.has_entity_type(v.type):
                raise GraphError(f"unknown entity type {v.type!r} on {v.id}")
    filled: set[tuple[str, str]] = set()
    for a in graph.arguments:
        if a.event not in event_types or a.event in BOUNDARY:
            raise GraphError(f"argument references unknown event {a.event!r}")
        if a.entity not in entity_types:
            raise GraphError(f"argument references unknown entity {a.entity!r}")
        if (a.event, a.role) in filled:
            raise GraphError(f"role {a.role!r} of {a.event} filled more than once")
        filled.add((a.event, a.role))
        if ontology is not None:
            names = [r.name for r in ontology.roles(event_types[a.event])]
            if a.role not in names:
                raise GraphError(
                    f"role {a.role!r} is not an argument role of {event_types[a.event]!r}"
                )
    pairs: set[tuple[str, str]] = set()
    for r in graph.relations:
        if r.head not in entity_types or r.tail not in entity_types:
            raise GraphError(f"relation references unknown entity ({r.head}, {r.tail})")
        if r.head == r.tail:
            raise GraphError(f"self relation on {r.head}")
        if r.tail < r.head:
            raise GraphError(f"relation ({r.head}, {r.tail}) not canonically ordered")
        if (r.head, r.tail) in pairs:
            raise GraphError(f"duplicate relation between {r.head} and {r.tail}")
        pairs.add((r.head, r.tail))
        if ontology is not None and not ontology.has_relation_type(r.type):
            raise GraphError(f"unknown relation type {r.type!r}")
    seen_edges: set[tuple[str, str]] = set()
    for t in graph.temporal:
        if t.before not in event_types or t.after not in event_types:
            raise GraphError(f"temporal edge references unknown event ({t.before}, {t.after})")
        if (t.before, t.after) in seen_edges:
            raise GraphError(f"duplicate temporal edge {t.before}->{t.after}")
        seen_edges.add((t.before, t.after))
        if t.after == SOG or t.before == EOG:
            raise GraphError("boundary node on the wrong side of a temporal edge")
    cycle = find_cycle([e.id for e in graph.events], seen_edges)
    if cycle is not None:
        raise CycleError(cycle)
    if require_connected:
        touched = {t.before for t in graph.real_temporal()} | {t.after for t in graph.real_temporal()}
        for e in graph.real_events():
            if e.id not in touched:
                raise GraphError(f"isolated event {e.id}")


def _records(data: Mapping[str, Any], key: str) -> list[dict[str, Any]]:
    value = data.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
        raise GraphError(f"graph key {key!r} must be a list of records")
    return value


def graph_from_dict(
    data: Mapping[str, Any],
    ontology: Ontology | None = None,
    *,
    drop_isolated: bool = True,
    cls: type[InstanceGraph] = InstanceGraph,
) -> InstanceGraph:
    """Build and validate a graph from its JSON record form.

    Relation edges are canonicalized and deduplicated (one relation per
    unordered entity pair).  With ``drop_isolated`` events outside every
    temporal edge are removed together with their argument edges, and
    entities left without any argument edge are removed too.
    """
    if not isinstance(data, Mapping):
        raise GraphError("graph document must be a mapping")
    try:
        events = [Event(str(r["id"]), str(r["type"])) for r in _records(data, "events")]
        entities = [Entity(str(r["id"]), str(r["type"])) for r in _records(data, "entities")]
        arguments = [
            Argument(str(r["event"]), str(r["role"]), str(r["entity"]))
            for r in _records(data, "arguments")
        ]
        raw_relations = [
            (str(r["head"]), str(r["type"]), str(r["tail"])) for r in _records(data, "relations")
        ]
        raw_temporal = [(str(r["before"]), str(r["after"])) for r in _records(data, "temporal")]
    except KeyError as exc:
        raise GraphError(f"graph record missing field {exc.args[0]!r}") from None
    graph_id = str(data.get("graph_id", ""))

    arguments = list(dict.fromkeys(arguments))
    # one relation per unordered pair; conflicting types keep the first by name
    by_pair: dict[tuple[str, str], Relation] = {}
    for head, rel_type, tail in raw_relations:
        if head == tail:
            warnings.warn(f"{graph_id}: dropped self relation on {head}", IngestWarning, stacklevel=2)
            continue
        rel = canonical_relation(head, rel_type, tail)
        key = (rel.head, rel.tail)
        kept = by_pair.get(key)
        if kept is not None and kept.type != rel.type:
            warnings.warn(
                f"{graph_id}: conflicting relation types between {key[0]} and {key[1]}",
                IngestWarning,
                stacklevel=2,
            )
        if kept is None or rel.type < kept.type:
            by_pair[key] = rel
    relations = list(by_pair.values())
    temporal = [Temporal(b, a) for b, a in dict.fromkeys(raw_temporal)]

    real = [e for e in events if e.id not in BOUNDARY]
    # a lone event has nothing to be temporally related to, so it is kept
    if drop_isolated and len(real) > 1:
        touched = {t.before for t in temporal} | {t.after for t in temporal}
        dropped = [e.id for e in real if e.id not in touched]
        if dropped:
            warnings.warn(
                f"{graph_id}: dropped isolated events {dropped}", IngestWarning, stacklevel=2
            )
            gone = set(dropped)
            events = [e for e in events if e.id not in gone]
            arguments = [a for a in arguments if a.event not in gone]
    if drop_isolated:
        used = {a.entity for a in arguments}
        orphans = [v.id for v in entities if v.id not in used]
        if orphans:
            gone = set(orphans)
            entities = [v for v in entities if v.id not in gone]
            relations = [r for r in relations if r.head not in gone and r.tail not in gone]

    graph = cls(
        graph_id=graph_id,
        complex_event_type=str(data.get("complex_event_type", "")),
        events=tuple(events),
        entities=tuple(entities),
        arguments=tuple(arguments),
        relations=tuple(relations),
        temporal=tuple(temporal),
    )
    validate_graph(graph, ontology)
    return graph


def ingest_graph(source: str, ontology: Ontology) -> InstanceGraph:
    """Parse instance-graph JSON text and validate it against ``ontology``."""
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        offset = len(source[: exc.pos].encode("utf-8"))
        raise GraphError(f"graph parse error at byte offset {offset}: {exc.msg}") from exc
    return graph_from_dict(data, ontology)


def graph_to_dict(graph: InstanceGraph) -> dict[str, Any]:
    out: dict[str, Any] = {
        "graph_id": graph.graph_id,
        "complex_event_type": graph.complex_event_type,
        "events": [{"id": e.id, "type": e.type} for e in graph.events if e.id not in BOUNDARY],
        "entities": [{"id": v.id, "type": v.type} for v in graph.entities],
        "arguments": [{"event": a.event, "role": a.role, "entity": a.entity} for a in graph.arguments],
        "relations": [{"head": r.head, "type": r.type, "tail": r.tail} for r in graph.relations],
        "temporal": [
            {"before": t.before, "after": t.after}
            for t in graph.temporal
            if t.before not in BOUNDARY and t.after not in BOUNDARY
        ],
    }
    if isinstance(graph, SchemaGraph) and graph.probabilities:
        out["probabilities"] = dict(graph.probabilities)
    return out


def dumps_graph(graph: InstanceGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=2)


def read_graph(path: str | Path, ontology: Ontology) -> InstanceGraph:
    return ingest_graph(Path(path).read_text(encoding="utf-8"), ontology)


def write_graph(graph: InstanceGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_graph(graph) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# boundary nodes and linearization
# ---------------------------------------------------------------------------


def add_boundary_nodes(graph: InstanceGraph) -> InstanceGraph:
    """Add SOG before every source event and EOG after every sink event.

    Idempotent: a graph that already carries boundary nodes is returned as is.
    """
    if graph.has_boundary:
        return graph
    real = graph.real_events()
    preds = graph.predecessors()
    succs = graph.successors()
    sources = [e.id for e in real if not preds[e.id]]
    sinks = [e.id for e in real if not succs[e.id]]
    temporal = [Temporal(SOG, s) for s in sources] + list(graph.real_temporal())
    temporal += [Temporal(s, EOG) for s in sinks]
    if not real:
        temporal = [Temporal(SOG, EOG)]
    return replace(
        graph,
        events=(Event(SOG, SOG), *real, Event(EOG, EOG)),
        temporal=tuple(temporal),
    )


@dataclass(frozen=True)
class LinearizedGraph:
    graph: InstanceGraph
    order: tuple[str, ...]

    def prefix(self, i: int) -> InstanceGraph:
        return prefix_subgraph(self, i)

    @property
    def step_views(self) -> list[InstanceGraph]:
        return [prefix_subgraph(self, i) for i in range(len(self.order) + 1)]


def topological_order(graph: InstanceGraph) -> list[str]:
    """Kahn traversal from the sources; ready events leave in ascending node index.

    When node indices follow generation order (as they do for every graph the
    model generates) the result reproduces that generation order exactly.
    """
    index = {e.id: i for i, e in enumerate(graph.events)}
    succ: dict[str, list[str]] = {e.id: [] for e in graph.events}
    indeg = {e.id: 0 for e in graph.events}
    for t in graph.temporal:
        succ[t.before].append(t.after)
        indeg[t.after] += 1
    heap = [index[n] for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    ids = [e.id for e in graph.events]
    order: list[str] = []
    while heap:
        node = ids[heapq.heappop(heap)]
        order.append(node)
        for nxt in succ[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, index[nxt])
    if len(order) != len(ids):
        raise CycleError(find_cycle(ids, [(t.before, t.after) for t in graph.temporal]) or [])
    return order


def linearize(graph: InstanceGraph) -> LinearizedGraph:
    if not graph.has_boundary:
        raise GraphError("linearize requires boundary nodes; call add_boundary_nodes first")
    order = topological_order(graph)
    if order[0] != SOG or order[-1] != EOG:
        raise GraphError("SOG/EOG are not the unique source/sink of the temporal graph")
    return LinearizedGraph(graph, tuple(order))


def prefix_subgraph(lin: LinearizedGraph, i: int) -> InstanceGraph:
    """The subgraph induced by the events at positions ``< i`` and their arguments."""
    if not 0 <= i <= len(lin.order):
        raise IndexError(f"prefix position {i} outside [0, {len(lin.order)}]")
    graph = lin.graph
    keep = set(lin.order[:i])
    arguments = tuple(a for a in graph.arguments if a.event in keep)
    used = {a.entity for a in arguments}
    return replace(
        graph,
        events=tuple(e for e in graph.events if e.id in keep),
        entities=tuple(v for v in graph.entities if v.id in used),
        arguments=arguments,
        relations=tuple(r for r in graph.relations if r.head in used and r.tail in used),
        temporal=tuple(t for t in graph.temporal if t.before in keep and t.after in keep),
    )


# ---------------------------------------------------------------------------
# derived graphs
# ---------------------------------------------------------------------------


def strip_arguments(graph: InstanceGraph) -> InstanceGraph:
    """Events and temporal edges only (the no-argument ablation view)."""
    return replace(graph, entities=(), arguments=(), relations=())


def ending_events(graph: InstanceGraph) -> list[str]:
    """Real events with no outgoing real temporal edge."""
    succ = graph.successors()
    return [e.id for e in graph.real_events() if not succ[e.id]]


def remove_events(graph: InstanceGraph, drop: Iterable[str]) -> InstanceGraph:
    """Remove events with their argument edges; orphaned entities go too."""
    gone = set(drop)
    real = [e for e in graph.events if e.id not in gone and e.id not in BOUNDARY]
    arguments = tuple(a for a in graph.arguments if a.event not in gone)
    used = {a.entity for a in arguments}
    return replace(
        graph,
        events=tuple(real),
        entities=tuple(v for v in graph.entities if v.id in used),
        arguments=arguments,
        relations=tuple(r for r in graph.relations if r.head in used and r.tail in used),
        temporal=tuple(
            t for t in graph.real_temporal() if t.before not in gone and t.after not in gone
        ),
    )


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------

MANIFEST = "manifest.json"


def load_corpus(directory: str | Path, ontology: Ontology) -> dict[str, list[InstanceGraph]]:
    """Read a corpus directory: graph files plus a manifest of splits."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise GraphError(f"corpus manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    splits: dict[str, list[InstanceGraph]] = {}
    for split in ("train", "dev", "test"):
        splits[split] = [read_graph(directory / name, ontology) for name in manifest.get(split, [])]
    return splits


def write_corpus(directory: str | Path, splits: Mapping[str, list[InstanceGraph]]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, list[str]] = {}
    for split, graphs in splits.items():
        names = []
        for g in graphs:
            name = f"{g.graph_id}.json"
            write_graph(g, directory / name)
            names.append(name)
        manifest[split] = names
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
