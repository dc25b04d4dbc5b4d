"""Shared builders for the test suite."""

from __future__ import annotations

import json

import numpy as np

from temporal_schema.graph import graph_from_dict
from temporal_schema.model import ModelConfig, ModelParams, init_params
from temporal_schema.ontology import make_ontology


def kairos_sized_source() -> str:
    """An ontology with the published KAIROS sizes and synthetic names."""
    events = [f"Event{k}" for k in range(67)]
    roles = [{"event": events[k % 67], "role": f"Role{k // 67}"} for k in range(85)]
    return json.dumps(
        {
            "event_types": events,
            "entity_types": [f"Entity{k}" for k in range(24)],
            "relation_types": [f"Relation{k}" for k in range(46)],
            "roles": roles,
        }
    )


def toy_ontology_():
    # 3 event types, 2 entity types, 1 relation, 4 roles
    return make_ontology(
        {"Attack": ["Attacker", "Target"], "Die": ["Victim"], "Arrest": ["Detainee"]},
        ["Person", "Facility"],
        ["PartWhole"],
    )


def toy_graph_(ontology):
    """Attack before Die and Arrest; the attacker is later detained."""
    return graph_from_dict(
        {
            "graph_id": "toy",
            "complex_event_type": "bombing",
            "events": [{"id": "a", "type": "Attack"}, {"id": "d", "type": "Die"}, {"id": "r", "type": "Arrest"}],
            "entities": [
                {"id": "p1", "type": "Person"},
                {"id": "p2", "type": "Person"},
                {"id": "f", "type": "Facility"},
            ],
            "arguments": [
                {"event": "a", "role": "Attacker", "entity": "p1"},
                {"event": "a", "role": "Target", "entity": "f"},
                {"event": "d", "role": "Victim", "entity": "p2"},
                {"event": "r", "role": "Detainee", "entity": "p1"},
            ],
            "relations": [{"head": "p2", "type": "PartWhole", "tail": "f"}],
            "temporal": [{"before": "a", "after": "d"}, {"before": "a", "after": "r"}],
        },
        ontology,
    )


def randomize_biases(params: ModelParams, seed: int, scale: float = 0.1) -> ModelParams:
    """Nonzero biases keep ReLU pre-activations away from exact zeros."""
    rng = np.random.default_rng(seed)
    for _, t in params.store.items():
        if t.data.ndim == 1:
            t.data[:] = rng.normal(0.0, scale, t.data.shape)
    return params


def random_params(ontology, seed: int = 0, dim: int = 8, mixtures: int = 2, **kw) -> ModelParams:
    params = init_params(ontology, ModelConfig(dim=dim, hidden=dim, mixtures=mixtures, **kw), seed=seed)
    return randomize_biases(params, seed)


# criterion number -> "PASS ..." / "FAIL ..." line, filled by the acceptance suite
ACCEPTANCE: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    assert ok, line
