"""Sequential-pattern-mining baseline.

Random walks over the temporal graphs become event-type sequences, PrefixSpan
mines the frequent subsequences, the top pattern becomes a chain schema, and
next-event prediction scores candidates by the support of suffix patterns.
"""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import Argument, Entity, Event, InstanceGraph, SchemaGraph, Temporal, canonical_relation

Pattern = tuple[str, ...]


@dataclass(frozen=True)
class TypeSequence:
    graph_id: str
    types: tuple[str, ...]


def _walk(succ: dict[str, list[str]], start: str, rng: np.random.Generator) -> list[str]:
    path = [start]
    while succ[path[-1]]:
        options = succ[path[-1]]
        path.append(options[int(rng.integers(len(options)))])
    return path


def extract_sequences(graphs: Sequence[InstanceGraph], seed: int = 0, walks_per_node: int = 10) -> list[TypeSequence]:
    """Uniform random walks along temporal edges from every event to a sink.

    Each graph draws from its own child of ``seed``, so graphs can be
    processed independently.
    """
    if walks_per_node < 1:
        raise ValueError("walks_per_node must be at least 1")
    db: list[TypeSequence] = []
    for graph, child in zip(graphs, np.random.SeedSequence(seed).spawn(len(graphs))):
        rng = np.random.default_rng(child)
        succ = graph.successors(real_only=True)
        types = graph.event_types
        for e in graph.real_events():
            for _ in range(walks_per_node):
                db.append(TypeSequence(graph.graph_id, tuple(types[n] for n in _walk(succ, e.id, rng))))
    return db


def _as_sequences(db: Iterable[TypeSequence | Sequence[str]]) -> list[tuple[str, ...]]:
    out = []
    for s in db:
        seq = s.types if isinstance(s, TypeSequence) else tuple(s)
        if not seq:
            raise ValueError("sequence database contains an empty sequence")
        out.append(seq)
    return out


def mine_patterns(
    db: Iterable[TypeSequence | Sequence[str]],
    min_support: int = 2,
    max_length: int | None = None,
) -> list[tuple[Pattern, int]]:
    """All subsequence patterns with support >= ``min_support`` (PrefixSpan).

    Support is the number of database sequences containing the pattern as a
    (not necessarily contiguous) subsequence.  Ranked by support, then
    length (longer first), then lexicographically.
    """
    if min_support < 1:
        raise ValueError("min_support must be at least 1")
    counts = Counter(_as_sequences(db))
    seqs = list(counts)
    weights = [counts[s] for s in seqs]
    found: list[tuple[Pattern, int]] = []

    def grow(prefix: Pattern, projected: list[tuple[int, int]]) -> None:
        if max_length is not None and len(prefix) >= max_length:
            return
        support: dict[str, int] = defaultdict(int)
        for sid, start in projected:
            for item in set(seqs[sid][start:]):
                support[item] += weights[sid]
        for item in sorted(support):
            if support[item] < min_support:
                continue
            pattern = prefix + (item,)
            found.append((pattern, support[item]))
            nxt = []
            for sid, start in projected:
                seq = seqs[sid]
                for k in range(start, len(seq)):
                    if seq[k] == item:
                        nxt.append((sid, k + 1))
                        break
            grow(pattern, nxt)

    grow((), [(sid, 0) for sid in range(len(seqs))])
    return rank_patterns(found)


def rank_patterns(patterns: Iterable[tuple[Pattern, int]]) -> list[tuple[Pattern, int]]:
    return sorted(patterns, key=lambda ps: (-ps[1], -len(ps[0]), ps[0]))


def is_subsequence(pattern: Sequence[str], seq: Sequence[str]) -> bool:
    it = iter(seq)
    return all(any(x == y for y in it) for x in pattern)


# ---------------------------------------------------------------------------
# chain schema
# ---------------------------------------------------------------------------


def baseline_schema(
    patterns: Sequence[tuple[Pattern, int]],
    attach: Sequence[InstanceGraph] = (),
    *,
    min_length: int = 1,
    graph_id: str = "baseline_schema",
) -> SchemaGraph:
    """Chain schema from the first ranked pattern of at least ``min_length`` events.

    Each event receives, for every role filled in at least half of the
    ``attach`` events of its type, one entity of the role's modal entity
    type.  Adjacent events are linked by their most frequent relation
    between arguments in ``attach``, when one was observed.
    """
    chosen = next((p for p, _ in patterns if len(p) >= min_length), None)
    if chosen is None:
        raise ValueError(f"no pattern of length >= {min_length}")

    role_types: dict[str, Counter] = defaultdict(Counter)
    type_counts: Counter = Counter()
    link_counts: dict[tuple[str, str], Counter] = defaultdict(Counter)
    for g in attach:
        types, etypes = g.event_types, g.entity_types
        by_event: dict[str, list[Argument]] = defaultdict(list)
        for a in g.arguments:
            by_event[a.event].append(a)
        for e in g.real_events():
            type_counts[e.type] += 1
            for a in by_event[e.id]:
                role_types[e.type][(a.role, etypes[a.entity])] += 1
        rel = {frozenset((r.head, r.tail)): r.type for r in g.relations}
        for t in g.real_temporal():
            for a, b in itertools.product(by_event[t.before], by_event[t.after]):
                r = rel.get(frozenset((a.entity, b.entity)))
                if r is not None:
                    link_counts[(types[t.before], types[t.after])][(a.role, r, b.role)] += 1

    events, entities, arguments, relations = [], [], [], []
    slot: list[dict[str, str]] = []
    for k, etype in enumerate(chosen, start=1):
        event_id = f"{etype}_{k}"
        events.append(Event(event_id, etype))
        roles: dict[str, Counter] = defaultdict(Counter)
        for (role, vtype), c in role_types[etype].items():
            roles[role][vtype] += c
        filled = {}
        for role in sorted(roles):
            if 2 * sum(roles[role].values()) < type_counts[etype]:
                continue
            vtype = sorted(roles[role].items(), key=lambda tc: (-tc[1], tc[0]))[0][0]
            entity_id = f"{vtype}_{len(entities) + 1}"
            entities.append(Entity(entity_id, vtype))
            arguments.append(Argument(event_id, role, entity_id))
            filled[role] = entity_id
        slot.append(filled)
    for k in range(len(chosen) - 1):
        counter = link_counts.get((chosen[k], chosen[k + 1]))
        if not counter:
            continue
        for (role_a, rel_type, role_b), _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])):
            a, b = slot[k].get(role_a), slot[k + 1].get(role_b)
            if a and b and a != b:
                relations.append(canonical_relation(a, rel_type, b))
                break
    temporal = [Temporal(events[k].id, events[k + 1].id) for k in range(len(events) - 1)]
    return SchemaGraph(
        graph_id=graph_id,
        complex_event_type="",
        events=tuple(events),
        entities=tuple(entities),
        arguments=tuple(arguments),
        relations=tuple(relations),
        temporal=tuple(temporal),
    )


# ---------------------------------------------------------------------------
# next-event prediction
# ---------------------------------------------------------------------------


def graph_paths(graph: InstanceGraph, max_paths: int = 1000, seed: int = 0) -> list[tuple[str, ...]]:
    """Source-to-sink event paths; beyond ``max_paths`` a seeded random sample of walks."""
    succ = graph.successors(real_only=True)
    pred = graph.predecessors(real_only=True)
    sources = [e.id for e in graph.real_events() if not pred[e.id]]
    paths: list[tuple[str, ...]] = []
    stack: list[tuple[str, ...]] = [(s,) for s in reversed(sources)]
    while stack:
        path = stack.pop()
        nxt = succ[path[-1]]
        if not nxt:
            paths.append(path)
            if len(paths) > max_paths:
                break
            continue
        for n in reversed(nxt):
            stack.append(path + (n,))
    if len(paths) <= max_paths:
        return paths
    rng = np.random.default_rng(seed)
    return [tuple(_walk(succ, sources[int(rng.integers(len(sources)))], rng)) for _ in range(max_paths)]


@dataclass(frozen=True)
class BaselinePrediction:
    ranking: tuple[str, ...]
    scores: dict[str, float]
    flagged: bool  # no pattern matched any suffix: uniform fallback


def baseline_predict(
    patterns: Sequence[tuple[Pattern, int]],
    graph: InstanceGraph,
    event_types: Sequence[str],
    *,
    window: int = 3,
    max_paths: int = 1000,
    seed: int = 0,
) -> BaselinePrediction:
    """Rank next event types by averaged suffix-pattern support.

    For each source-to-sink path the candidates are scored by the support of
    ``suffix + (candidate,)`` using the last ``min(window, len)`` events,
    backing off to shorter suffixes when nothing matches.  Scores are
    normalized per path and averaged; ties keep ``event_types`` order.
    """
    support = dict(patterns)
    types = graph.event_types
    totals = np.zeros(len(event_types))
    matched = 0
    for path in graph_paths(graph, max_paths, seed):
        seq = tuple(types[n] for n in path)
        for size in range(min(window, len(seq)), 0, -1):
            suffix = seq[-size:]
            scores = np.array([support.get(suffix + (c,), 0) for c in event_types], dtype=float)
            if scores.sum() > 0:
                totals += scores / scores.sum()
                matched += 1
                break
    flagged = matched == 0
    if flagged:
        totals = np.full(len(event_types), 1.0 / max(len(event_types), 1))
    else:
        totals /= matched
    order = sorted(range(len(event_types)), key=lambda k: (-totals[k], k))
    ranking = tuple(event_types[k] for k in order)
    return BaselinePrediction(ranking, {event_types[k]: float(totals[k]) for k in order}, flagged)


__all__ = [
    "BaselinePrediction",
    "TypeSequence",
    "baseline_predict",
    "baseline_schema",
    "extract_sequences",
    "graph_paths",
    "is_subsequence",
    "mine_patterns",
    "rank_patterns",
]
