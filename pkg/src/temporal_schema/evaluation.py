"""Perplexity, schema matching metrics and ending-event prediction."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import GraphError, InstanceGraph, ending_events, remove_events, validate_graph
from .model import ModelParams, graph_log_likelihood

CATEGORIES = ("shared", "related", "none")
MODES = {"full": "full", "event_only": "event_only", "event": "event_only"}


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    matched: int = 0
    predicted: int = 0
    gold: int = 0

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matched": self.matched,
            "predicted": self.predicted,
            "gold": self.gold,
        }


def f1_scores(matched: int, predicted: int, gold: int) -> Scores:
    """P/R/F1 with the empty-set conventions: both empty gives 1, one empty gives 0."""
    if predicted == 0 and gold == 0:
        return Scores(1.0, 1.0, 1.0, 0, 0, 0)
    if predicted == 0 or gold == 0:
        return Scores(0.0, 0.0, 0.0, matched, predicted, gold)
    p = matched / predicted
    r = matched / gold
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return Scores(p, r, f, matched, predicted, gold)


# ---------------------------------------------------------------------------
# perplexity
# ---------------------------------------------------------------------------


def perplexity(
    params: ModelParams,
    graphs: Sequence[InstanceGraph],
    mode: str = "full",
    normalization: str = "per_graph",
) -> float:
    """``2 ** (-mean log2 p(G))``; ``per_factor`` divides by the factor count instead."""
    if not graphs:
        raise ValueError("perplexity needs at least one graph")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if normalization not in ("per_graph", "per_factor"):
        raise ValueError(f"unknown normalization {normalization!r}")
    for g in graphs:
        validate_graph(g, params.ontology)
    results = [graph_log_likelihood(g, params, MODES[mode]) for g in graphs]
    total = sum(r.total for r in results)
    denom = len(graphs) if normalization == "per_graph" else sum(r.num_factors for r in results)
    return 2.0 ** (-total / denom)


# ---------------------------------------------------------------------------
# schema matching
# ---------------------------------------------------------------------------


def _types(graph: InstanceGraph) -> list[str]:
    return [e.type for e in graph.real_events()]


def event_match(pred: InstanceGraph, gold: InstanceGraph) -> Scores:
    """Multiset overlap of event types (boundary nodes excluded)."""
    p, g = Counter(_types(pred)), Counter(_types(gold))
    return f1_scores(sum((p & g).values()), sum(p.values()), sum(g.values()))


def event_sequences(graph: InstanceGraph, length: int, closure: bool = False) -> set[tuple[str, ...]]:
    """Event-type tuples along directed temporal paths of ``length`` events.

    Paths follow consecutive edges; with ``closure`` any chain in the
    transitive closure counts.
    """
    if length < 1:
        raise ValueError("sequence length must be positive")
    types = graph.event_types
    succ = graph.successors(real_only=True)
    if closure:
        succ = _closure(succ)
    out: set[tuple[str, ...]] = set()

    def extend(path: list[str]) -> None:
        if len(path) == length:
            out.add(tuple(types[n] for n in path))
            return
        for nxt in succ.get(path[-1], []):
            path.append(nxt)
            extend(path)
            path.pop()

    for e in graph.real_events():
        extend([e.id])
    return out


def _closure(succ: dict[str, list[str]]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for start in succ:
        seen: list[str] = []
        stack = list(succ.get(start, []))
        visited: set[str] = set()
        while stack:
            n = stack.pop()
            if n in visited:
                continue
            visited.add(n)
            seen.append(n)
            stack.extend(succ.get(n, []))
        out[start] = sorted(seen)
    return out


def sequence_match(pred: InstanceGraph, gold: InstanceGraph, length: int = 2, closure: bool = False) -> Scores:
    ps, gs = event_sequences(pred, length, closure), event_sequences(gold, length, closure)
    return f1_scores(len(ps & gs), len(ps), len(gs))


def _degrees(graph: InstanceGraph) -> dict[str, tuple[int, int]]:
    succ = graph.successors(real_only=True)
    pred = graph.predecessors(real_only=True)
    return {e.id: (len(pred.get(e.id, [])), len(succ.get(e.id, []))) for e in graph.real_events()}


def event_alignment(pred: InstanceGraph, gold: InstanceGraph) -> list[tuple[str, str]]:
    """Greedy one-to-one matching of same-type events.

    Pairs are taken in order of increasing distance between their temporal
    (in-degree, out-degree) profiles, then by position in each graph.
    """
    dp, dg = _degrees(pred), _degrees(gold)
    pos_p = {e.id: k for k, e in enumerate(pred.real_events())}
    pos_g = {e.id: k for k, e in enumerate(gold.real_events())}
    candidates = []
    for a in pred.real_events():
        for b in gold.real_events():
            if a.type == b.type:
                cost = abs(dp[a.id][0] - dg[b.id][0]) + abs(dp[a.id][1] - dg[b.id][1])
                candidates.append((cost, pos_p[a.id], pos_g[b.id], a.id, b.id))
    candidates.sort()
    used_p: set[str] = set()
    used_g: set[str] = set()
    out = []
    for _, _, _, a, b in candidates:
        if a not in used_p and b not in used_g:
            used_p.add(a)
            used_g.add(b)
            out.append((a, b))
    out.sort(key=lambda ab: pos_p[ab[0]])
    return out


def connection_category(graph: InstanceGraph, a: str, b: str) -> str:
    """How two events are linked: a shared argument, related arguments, or neither."""
    args_a = {x.entity for x in graph.arguments_of(a)}
    args_b = {x.entity for x in graph.arguments_of(b)}
    if args_a & args_b:
        return "shared"
    for r in graph.relations:
        if (r.head in args_a and r.tail in args_b) or (r.head in args_b and r.tail in args_a):
            return "related"
    return "none"


@dataclass(frozen=True)
class ConnectionScores:
    per_category: dict[str, Scores]
    macro_f1: float
    pairs: int

    def as_dict(self) -> dict:
        return {
            "per_category": {c: s.as_dict() for c, s in self.per_category.items()},
            "macro_f1": self.macro_f1,
            "pairs": self.pairs,
        }


def connection_match(
    pred: InstanceGraph, gold: InstanceGraph, alignment: Sequence[tuple[str, str]] | None = None
) -> ConnectionScores:
    """Per-category and macro F1 of event-pair connection types over aligned events."""
    if alignment is None:
        alignment = event_alignment(pred, gold)
    tallies = {c: [0, 0, 0] for c in CATEGORIES}  # matched, predicted, gold
    pairs = 0
    for (p1, g1), (p2, g2) in itertools.combinations(alignment, 2):
        cp = connection_category(pred, p1, p2)
        cg = connection_category(gold, g1, g2)
        pairs += 1
        tallies[cp][1] += 1
        tallies[cg][2] += 1
        if cp == cg:
            tallies[cp][0] += 1
    per = {c: f1_scores(*tallies[c]) for c in CATEGORIES}
    macro = sum(s.f1 for s in per.values()) / len(CATEGORIES)
    return ConnectionScores(per, macro, pairs)


@dataclass(frozen=True)
class MatchReport:
    event: Scores
    sequence: dict[int, Scores]
    connection: ConnectionScores
    alignment: tuple[tuple[str, str], ...] = ()

    def as_dict(self) -> dict:
        return {
            "event_match": self.event.as_dict(),
            "sequence_match": {str(l): s.as_dict() for l, s in self.sequence.items()},
            "connection_match": self.connection.as_dict(),
        }

    def table(self) -> str:
        rows = [("event_match", self.event)]
        rows += [(f"sequence_match_l{l}", s) for l, s in sorted(self.sequence.items())]
        lines = [f"{'metric':<22}{'precision':>10}{'recall':>10}{'f1':>10}"]
        for name, s in rows:
            lines.append(f"{name:<22}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}")
        for c, s in self.connection.per_category.items():
            lines.append(f"{'connection_' + c:<22}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}")
        lines.append(f"{'connection_macro':<22}{'':>10}{'':>10}{self.connection.macro_f1:>10.4f}")
        return "\n".join(lines)


def match_report(
    pred: InstanceGraph, gold: InstanceGraph, lengths: Sequence[int] = (2, 3), closure: bool = False
) -> MatchReport:
    alignment = event_alignment(pred, gold)
    return MatchReport(
        event=event_match(pred, gold),
        sequence={l: sequence_match(pred, gold, l, closure) for l in lengths},
        connection=connection_match(pred, gold, alignment),
        alignment=tuple(alignment),
    )


# ---------------------------------------------------------------------------
# ending-event prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRow:
    graph_id: str
    ranking: tuple[str, ...]
    gold_types: tuple[str, ...]
    rank: int | None  # 1-based rank of the first correct type
    flagged: bool = False  # ranking came from a fallback rule

    @property
    def reciprocal_rank(self) -> float:
        return 0.0 if self.rank is None else 1.0 / self.rank

    @property
    def hits1(self) -> float:
        return 1.0 if self.rank == 1 else 0.0

    def as_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "rank": self.rank,
            "reciprocal_rank": self.reciprocal_rank,
            "hits1": self.hits1,
            "gold_types": list(self.gold_types),
            "top": list(self.ranking[:5]),
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class PredictionReport:
    mrr: float
    hits1: float
    rows: tuple[PredictionRow, ...] = field(default=())

    @property
    def ranks(self) -> list[int | None]:
        return [r.rank for r in self.rows]

    def as_dict(self) -> dict:
        return {"mrr": self.mrr, "hits1": self.hits1, "rows": [r.as_dict() for r in self.rows]}


def truncate_endings(graph: InstanceGraph) -> tuple[InstanceGraph, list[str]]:
    """Remove every ending event; returns the truncated graph and the removed types."""
    endings = ending_events(graph)
    types = graph.event_types
    removed = sorted({types[e] for e in endings})
    truncated = remove_events(graph, endings)
    if not truncated.real_events():
        raise GraphError(f"{graph.graph_id}: no events left after removing ending events")
    return truncated, removed


def score_ranking(graph_id: str, ranking: Sequence[str], gold_types: Sequence[str], flagged: bool = False) -> PredictionRow:
    gold = set(gold_types)
    rank = next((k + 1 for k, t in enumerate(ranking) if t in gold), None)
    return PredictionRow(graph_id, tuple(ranking), tuple(sorted(gold)), rank, flagged)


def rank_next_events(params: ModelParams, truncated: InstanceGraph) -> list[str]:
    """Event types by descending next-step probability after the whole graph (EOG excluded)."""
    ll = graph_log_likelihood(truncated, params, "event_only")
    probs = ll.last_event_probs[: params.ontology.num_event_types]
    order = sorted(range(len(probs)), key=lambda k: (-probs[k], k))
    return [params.ontology.event_types[k] for k in order]


def predict_ending_events(params: ModelParams, graph: InstanceGraph) -> tuple[list[str], PredictionRow]:
    """Hide the ending events, rank event types for the next step, score the ranking."""
    validate_graph(graph, params.ontology)
    truncated, gold = truncate_endings(graph)
    ranking = rank_next_events(params, truncated)
    return ranking, score_ranking(graph.graph_id, ranking, gold)


def aggregate_reports(rows: Sequence[PredictionRow]) -> PredictionReport:
    if not rows:
        raise ValueError("aggregate_reports needs at least one row")
    mrr = float(np.mean([r.reciprocal_rank for r in rows]))
    hits = float(np.mean([r.hits1 for r in rows]))
    return PredictionReport(mrr, hits, tuple(rows))


__all__ = [
    "CATEGORIES",
    "ConnectionScores",
    "MatchReport",
    "PredictionReport",
    "PredictionRow",
    "Scores",
    "aggregate_reports",
    "connection_category",
    "connection_match",
    "event_alignment",
    "event_match",
    "event_sequences",
    "f1_scores",
    "match_report",
    "perplexity",
    "predict_ending_events",
    "rank_next_events",
    "score_ranking",
    "sequence_match",
    "truncate_endings",
]
