"""Planted-schema corpora: instance graphs sampled from a known template.

A template is a schema graph plus three annexes:

``branch_probs``
    event id -> inclusion probability, either a number or a conditional
    ``{"given": "event.Role", "equals": entity, "p": x, "otherwise": y}``
    evaluated on the sampled filler of that argument.
``coref_probs``
    ``"event.Role"`` -> either the probability of keeping the template's
    filler (else a fresh entity of its type), or ``{entity: prob}`` choosing
    which template entity fills the role (leftover mass: fresh entity).
``noise``
    ``event_drop``, ``spurious_event`` and ``edge_drop`` rates applied after
    instantiation.

Excluded or dropped events are bypassed: their predecessors are linked to
their successors, so ordering constraints survive.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .graph import (
    Argument,
    Entity,
    Event,
    GraphError,
    InstanceGraph,
    SchemaGraph,
    canonical_relation,
    graph_from_dict,
    graph_to_dict,
    validate_graph,
)
from .ontology import Ontology, read_ontology

MAX_ATTEMPTS = 10


@dataclass(frozen=True)
class Noise:
    event_drop: float = 0.0
    spurious_event: float = 0.0
    edge_drop: float = 0.0

    def __post_init__(self) -> None:
        for name in ("event_drop", "spurious_event", "edge_drop"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"noise {name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class PlantedSchema:
    template: SchemaGraph
    branch_probs: Mapping[str, Any] = field(default_factory=dict)
    coref_probs: Mapping[str, Any] = field(default_factory=dict)
    noise: Noise = field(default_factory=Noise)

    def __post_init__(self) -> None:
        events = self.template.event_types
        entities = self.template.entity_types
        fillers = {(a.event, a.role) for a in self.template.arguments}
        for event_id, spec in self.branch_probs.items():
            if event_id not in events:
                raise GraphError(f"branch_probs names unknown event {event_id!r}")
            if isinstance(spec, Mapping):
                _check_prob(spec.get("p"), f"branch {event_id}.p")
                _check_prob(spec.get("otherwise"), f"branch {event_id}.otherwise")
                slot = _slot(spec.get("given", ""))
                if slot not in fillers:
                    raise GraphError(f"branch {event_id} conditions on unknown argument {spec.get('given')!r}")
                if spec.get("equals") not in entities:
                    raise GraphError(f"branch {event_id} compares with unknown entity {spec.get('equals')!r}")
            else:
                _check_prob(spec, f"branch {event_id}")
        for key, spec in self.coref_probs.items():
            if _slot(key) not in fillers:
                raise GraphError(f"coref_probs names unknown argument {key!r}")
            if isinstance(spec, Mapping):
                for entity, p in spec.items():
                    if entity not in entities:
                        raise GraphError(f"coref_probs {key} names unknown entity {entity!r}")
                    _check_prob(p, f"coref {key}.{entity}")
                if sum(spec.values()) > 1.0 + 1e-9:
                    raise ValueError(f"coref_probs {key} sums to more than 1")
            else:
                _check_prob(spec, f"coref {key}")


def _check_prob(value: Any, label: str) -> None:
    if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"{label} must be a probability in [0, 1], got {value!r}")


def _slot(key: str) -> tuple[str, str]:
    event, _, role = str(key).rpartition(".")
    return event, role


def planted_from_dict(data: Mapping[str, Any], ontology: Ontology) -> PlantedSchema:
    template = graph_from_dict(data, ontology, drop_isolated=False, cls=SchemaGraph)
    return PlantedSchema(
        template=template,
        branch_probs=dict(data.get("branch_probs", {})),
        coref_probs=dict(data.get("coref_probs", {})),
        noise=Noise(**data.get("noise", {})),
    )


def read_planted(path: str | Path, ontology: Ontology) -> PlantedSchema:
    return planted_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), ontology)


def builtin_ontology() -> Ontology:
    """Ontology of the bundled IED-like template."""
    with resources.as_file(resources.files(__package__) / "data" / "ied_ontology.json") as p:
        return read_ontology(p)


def builtin_template(ontology: Ontology | None = None) -> PlantedSchema:
    """The bundled IED-like planted schema.

    learn -> two purchases (materials, vehicle) -> assemble -> drive ->
    attack -> {die, injure, damage} -> investigate -> arrest or claim.  The
    attack instrument is the vehicle or the bomb with equal probability and
    the ending is Arrest exactly when it is the vehicle, so the ending event
    depends on an argument rather than on the preceding event types.
    """
    ontology = ontology or builtin_ontology()
    with resources.as_file(resources.files(__package__) / "data" / "ied_template.json") as p:
        return read_planted(p, ontology)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class Alignment:
    """Instance node id -> template node id (None for spurious events)."""

    events: dict[str, str | None]
    entities: dict[str, str | None]

    def as_dict(self) -> dict:
        return {"events": self.events, "entities": self.entities}


def _sample_fillers(schema: PlantedSchema, rng: np.random.Generator) -> dict[tuple[str, str], str | None]:
    """Template entity per argument slot; None means a fresh entity of the slot's type."""
    out: dict[tuple[str, str], str | None] = {}
    for a in schema.template.arguments:
        spec = schema.coref_probs.get(f"{a.event}.{a.role}")
        if spec is None:
            out[(a.event, a.role)] = a.entity
        elif isinstance(spec, Mapping):
            u = rng.random()
            chosen = None
            acc = 0.0
            for entity in spec:
                acc += spec[entity]
                if u < acc:
                    chosen = entity
                    break
            out[(a.event, a.role)] = chosen
        else:
            out[(a.event, a.role)] = a.entity if rng.random() < spec else None
    return out


def _bypass(edges: set[tuple[str, str]], drop: str) -> set[tuple[str, str]]:
    preds = [b for b, a in edges if a == drop]
    succs = [a for b, a in edges if b == drop]
    kept = {(b, a) for b, a in edges if drop not in (b, a)}
    kept.update((p, s) for p in preds for s in succs)
    return kept


def _instantiate(
    schema: PlantedSchema, rng: np.random.Generator, graph_id: str, spurious_types: tuple[str, ...]
) -> tuple[InstanceGraph, Alignment]:
    template = schema.template
    ontology_types = template.event_types
    entity_types = template.entity_types
    fillers = _sample_fillers(schema, rng)

    included = []
    for e in template.real_events():
        spec = schema.branch_probs.get(e.id, 1.0)
        if isinstance(spec, Mapping):
            holds = fillers.get(_slot(spec["given"])) == spec["equals"]
            p = spec["p"] if holds else spec["otherwise"]
        else:
            p = spec
        if rng.random() < p:
            included.append(e.id)
    noise = schema.noise
    if noise.event_drop > 0:
        included = [e for e in included if rng.random() >= noise.event_drop]

    edges = {(t.before, t.after) for t in template.real_temporal()}
    keep = set(included)
    for e in template.real_events():
        if e.id not in keep:
            edges = _bypass(edges, e.id)

    # instance ids follow template order
    event_ids = {e: f"e{k}" for k, e in enumerate(included, start=1)}
    events = [Event(event_ids[e], ontology_types[e]) for e in included]
    align_events: dict[str, str | None] = {event_ids[e]: e for e in included}
    entity_ids: dict[str, str] = {}
    entities: list[Entity] = []
    align_entities: dict[str, str | None] = {}
    arguments: list[Argument] = []
    for a in template.arguments:
        if a.event not in keep:
            continue
        source = fillers[(a.event, a.role)]
        if source is None:
            new_id = f"v{len(entities) + 1}"
            entities.append(Entity(new_id, entity_types[a.entity]))
            align_entities[new_id] = None
        else:
            if source not in entity_ids:
                entity_ids[source] = f"v{len(entities) + 1}"
                entities.append(Entity(entity_ids[source], entity_types[source]))
                align_entities[entity_ids[source]] = source
            new_id = entity_ids[source]
        arguments.append(Argument(event_ids[a.event], a.role, new_id))
    relations = [
        canonical_relation(entity_ids[r.head], r.type, entity_ids[r.tail])
        for r in template.relations
        if r.head in entity_ids and r.tail in entity_ids
    ]
    temporal = [(event_ids[b], event_ids[a]) for b, a in edges]
    temporal.sort(key=lambda ba: (int(ba[0][1:]), int(ba[1][1:])))

    if noise.edge_drop > 0:
        temporal = [t for t in temporal if rng.random() >= noise.edge_drop]
    if noise.spurious_event > 0:
        spurious = int(rng.binomial(len(events), noise.spurious_event)) if events else 0
        for _ in range(spurious):
            anchor = events[int(rng.integers(len(events)))].id
            new_id = f"e{len(events) + 1}"
            events.append(Event(new_id, spurious_types[int(rng.integers(len(spurious_types)))]))
            align_events[new_id] = None
            temporal.append((anchor, new_id))

    data = {
        "graph_id": graph_id,
        "complex_event_type": template.complex_event_type,
        "events": [{"id": e.id, "type": e.type} for e in events],
        "entities": [{"id": v.id, "type": v.type} for v in entities],
        "arguments": [{"event": a.event, "role": a.role, "entity": a.entity} for a in arguments],
        "relations": [{"head": r.head, "type": r.type, "tail": r.tail} for r in relations],
        "temporal": [{"before": b, "after": a} for b, a in temporal],
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        graph = graph_from_dict(data)
    present_events = {e.id for e in graph.events}
    present_entities = {v.id for v in graph.entities}
    alignment = Alignment(
        {k: v for k, v in align_events.items() if k in present_events},
        {k: v for k, v in align_entities.items() if k in present_entities},
    )
    return graph, alignment


def generate_corpus(
    schema: PlantedSchema,
    n: int,
    seed: int = 0,
    *,
    ontology: Ontology | None = None,
    prefix: str = "g",
) -> tuple[list[InstanceGraph], dict[str, dict]]:
    """``n`` instance graphs of ``schema`` plus their template alignments.

    Each graph uses its own child seed.  A graph emptied by noise is
    regenerated up to ten times before giving up.  Spurious events draw their
    type from ``ontology`` when given, else from the template's types.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if ontology is not None:
        spurious_types = tuple(ontology.event_types)
    else:
        spurious_types = tuple(sorted({e.type for e in schema.template.real_events()}))
    graphs: list[InstanceGraph] = []
    alignments: dict[str, dict] = {}
    width = len(str(n - 1))
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        graph_id = f"{prefix}{k:0{width}d}"
        for _ in range(MAX_ATTEMPTS):
            graph, alignment = _instantiate(schema, rng, graph_id, spurious_types)
            if graph.real_events():
                break
        else:
            raise GraphError(f"{graph_id}: noise emptied the graph {MAX_ATTEMPTS} times in a row")
        if ontology is not None:
            validate_graph(graph, ontology)
        graphs.append(graph)
        alignments[graph_id] = alignment.as_dict()
    return graphs, alignments


def split_corpus(graphs: list[InstanceGraph], dev: float = 0.1, test: float = 0.1) -> dict[str, list[InstanceGraph]]:
    """Contiguous train/dev/test split (graphs are already i.i.d.)."""
    n = len(graphs)
    n_test = int(round(n * test))
    n_dev = int(round(n * dev))
    n_train = n - n_dev - n_test
    return {
        "train": graphs[:n_train],
        "dev": graphs[n_train : n_train + n_dev],
        "test": graphs[n_train + n_dev :],
    }


def template_dict(schema: PlantedSchema) -> dict:
    out = graph_to_dict(schema.template)
    out.pop("probabilities", None)
    out["branch_probs"] = dict(schema.branch_probs)
    out["coref_probs"] = dict(schema.coref_probs)
    noise = schema.noise
    out["noise"] = {"event_drop": noise.event_drop, "spurious_event": noise.spurious_event, "edge_drop": noise.edge_drop}
    return out


__all__ = [
    "Alignment",
    "Noise",
    "PlantedSchema",
    "builtin_ontology",
    "builtin_template",
    "generate_corpus",
    "planted_from_dict",
    "read_planted",
    "split_corpus",
    "template_dict",
]
