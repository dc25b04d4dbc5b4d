"""Temporal event graph model.

A graph is generated one event at a time in linearized temporal order.  Each
step predicts the event type from a mean-pooled graph state, expands one
placeholder entity per argument role, propagates edge-aware messages, decides
for every placeholder whether it is a new entity of some type or a copy of an
existing entity, types the relation edges between new and prior entities,
propagates again and finally decides the temporal edges from prior events to
the new one with a mixture of Bernoullis.

All of scoring (teacher forcing), greedy decoding and sampling run through
:func:`run_generation`, so every probability reported by a decoder is the
same number the likelihood assigns to that decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .graph import (
    BOUNDARY,
    EOG,
    SOG,
    Argument,
    Entity,
    Event,
    GraphError,
    InstanceGraph,
    SchemaGraph,
    Temporal,
    add_boundary_nodes,
    canonical_relation,
    linearize,
    validate_graph,
)
from .numerics import ParamStore, Tensor, no_grad
from .numerics import ops
from .ontology import Ontology

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    layers: int = 2
    mixtures: int = 2
    hidden: int | None = None
    argument_generation: bool = True

    def __post_init__(self) -> None:
        if self.dim < 1 or self.layers < 0 or self.mixtures < 1:
            raise ValueError(f"invalid model configuration {self}")

    @property
    def hidden_dim(self) -> int:
        return self.hidden or self.dim

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "layers": self.layers,
            "mixtures": self.mixtures,
            "hidden": self.hidden,
            "argument_generation": self.argument_generation,
        }


@dataclass
class ModelParams:
    """Learnable weights of the model together with the ontology they cover."""

    config: ModelConfig
    ontology: Ontology
    store: ParamStore

    @property
    def dtype(self) -> np.dtype:
        return self.store.dtype

    @property
    def num_event_classes(self) -> int:
        """Event types plus EOG."""
        return self.ontology.num_event_types + 1

    @property
    def eog_index(self) -> int:
        return self.ontology.num_event_types

    @property
    def other_index(self) -> int:
        """The no-relation class ``[O]``."""
        return self.ontology.num_relation_types

    def copy(self, dtype=None) -> ModelParams:
        return ModelParams(self.config, self.ontology, self.store.copy(dtype))


def parameter_shapes(config: ModelConfig, ontology: Ontology) -> dict[str, tuple[int, ...]]:
    d, h, b = config.dim, config.hidden_dim, config.mixtures
    n_e, n_v, n_r = ontology.num_event_types, ontology.num_entity_types, ontology.num_relation_types
    shapes: dict[str, tuple[int, ...]] = {
        # event types plus one row for SOG
        "event_type_embedding": (n_e + 1, d),
        "entity_type_embedding": (n_v, d),
        "role_vectors": (ontology.num_roles, d),
        # relation types plus one row for untyped virtual edges
        "relation_vectors": (n_r + 1, d),
    }
    for layer in range(config.layers):
        p = f"layer{layer}."
        shapes[p + "w_arg"] = (2 * d, d)
        shapes[p + "w_rel"] = (2 * d, d)
        shapes[p + "w_bfr"] = (d, d)
        shapes[p + "w_aft"] = (d, d)
        _mlp_shapes(shapes, p + "attention", d, h, 1)
        shapes[p + "gru.w_ih"] = (d, 3 * d)
        shapes[p + "gru.w_hh"] = (d, 3 * d)
        shapes[p + "gru.b_ih"] = (3 * d,)
        shapes[p + "gru.b_hh"] = (3 * d,)
    shapes["event_head.w"] = (d, n_e + 1)
    shapes["event_head.b"] = (n_e + 1,)
    shapes["entity_head.w"] = (d, n_v)
    shapes["entity_head.b"] = (n_v,)
    shapes["copy.w"] = (d, d)
    _mlp_shapes(shapes, "relation", d, h, n_r + 1)
    _mlp_shapes(shapes, "temporal_gamma", d, h, b)
    _mlp_shapes(shapes, "temporal_theta", d, h, b)
    return shapes


def _mlp_shapes(shapes: dict, prefix: str, d_in: int, h: int, d_out: int) -> None:
    shapes[f"{prefix}.w1"] = (d_in, h)
    shapes[f"{prefix}.b1"] = (h,)
    shapes[f"{prefix}.w2"] = (h, h)
    shapes[f"{prefix}.b2"] = (h,)
    shapes[f"{prefix}.w3"] = (h, d_out)
    shapes[f"{prefix}.b3"] = (d_out,)


def init_params(
    ontology: Ontology,
    config: ModelConfig | None = None,
    *,
    seed: int = 0,
    dtype=np.float64,
    zero: bool = False,
) -> ModelParams:
    """Glorot-uniform weights, zero biases, small normal type embeddings.

    ``zero=True`` gives the all-zero model whose every distribution is uniform.
    """
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape in parameter_shapes(config, ontology).items():
        if zero or len(shape) == 1:
            value = np.zeros(shape)
        elif name.endswith("embedding") or name.endswith("vectors"):
            value = rng.normal(0.0, 0.5, size=shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        store.add(name, value.astype(dtype))
    return ModelParams(config, ontology, store)


# ---------------------------------------------------------------------------
# generation state
# ---------------------------------------------------------------------------

EVENT, ENTITY, PLACEHOLDER, MERGED = "event", "entity", "placeholder", "merged"


@dataclass(frozen=True)
class NewEntity:
    """Argument decision: the placeholder becomes a new entity of ``type``."""

    type: str


@dataclass(frozen=True)
class CopyEntity:
    """Argument decision: the placeholder corefers with an existing entity."""

    entity_id: str


class GenerationState:
    """Partially generated graph plus one latent vector per node.

    Nodes are addressed by integer index internally and by id in the public
    functions.  Merged placeholders keep their row in ``latents`` but lose
    every edge.
    """

    def __init__(self, params: ModelParams, graph_id: str = "generated", complex_event_type: str = ""):
        self.params = params
        self.graph_id = graph_id
        self.complex_event_type = complex_event_type
        self.kinds: list[str] = []
        self.types: list[str | None] = []
        self.ids: list[str] = []
        self.index: dict[str, int] = {}
        self.latents: Tensor = Tensor(np.zeros((0, params.config.dim), dtype=params.dtype))
        self.event_nodes: list[int] = []
        self.entity_nodes: list[int] = []
        self.arguments: list[tuple[int, str, int]] = []
        self.relations: list[tuple[int, int, int]] = []
        self.temporal: list[tuple[int, int]] = []
        self.virtual_events: list[tuple[int, int]] = []
        self.virtual_entities: list[tuple[int, int]] = []
        self.placeholders: list[int] = []
        self.new_entities: list[int] = []
        self.prior_entities: list[int] = []
        self.current_event: int | None = None
        self.step = 0
        sog = self._add_node(SOG, EVENT, SOG, self._event_embedding(params.ontology.num_event_types))
        self.event_nodes.append(sog)

    # -- node bookkeeping -----------------------------------------------------------

    def _event_embedding(self, row: int) -> Tensor:
        return ops.take(self.params.store["event_type_embedding"], [row])

    def _add_node(self, node_id: str, kind: str, node_type: str | None, init: Tensor | None) -> int:
        if node_id in self.index:
            raise GraphError(f"duplicate node id {node_id!r} in generation state")
        k = len(self.ids)
        self.ids.append(node_id)
        self.kinds.append(kind)
        self.types.append(node_type)
        self.index[node_id] = k
        if init is None:
            init = Tensor(np.zeros((1, self.params.config.dim), dtype=self.params.dtype))
        self.latents = ops.concat([self.latents, init], axis=0)
        return k

    def fresh_id(self, base: str) -> str:
        """``base`` or, when taken, ``base'`` with enough primes to be unique."""
        while base in self.index:
            base += "'"
        return base

    def _rename(self, node: int, new_id: str) -> None:
        if new_id in self.index and self.index[new_id] != node:
            raise GraphError(f"duplicate node id {new_id!r} in generation state")
        del self.index[self.ids[node]]
        self.ids[node] = new_id
        self.index[new_id] = node

    def node(self, node_id: str) -> int:
        try:
            return self.index[node_id]
        except KeyError:
            raise GraphError(f"no node {node_id!r} in generation state") from None

    @property
    def num_events(self) -> int:
        """Real events generated so far (SOG excluded)."""
        return len(self.event_nodes) - 1

    def latent(self, node_id: str) -> np.ndarray:
        return self.latents.data[self.node(node_id)]

    def copy(self) -> GenerationState:
        """Shallow structural copy; latents are shared (they are immutable)."""
        out = GenerationState.__new__(GenerationState)
        for key, value in self.__dict__.items():
            if isinstance(value, list):
                value = list(value)
            elif isinstance(value, dict):
                value = dict(value)
            setattr(out, key, value)
        return out

    def to_graph(self, cls: type[InstanceGraph] = InstanceGraph, **extra) -> InstanceGraph:
        ids, types = self.ids, self.types
        events = tuple(Event(ids[k], types[k]) for k in self.event_nodes[1:])
        entities = tuple(Entity(ids[k], types[k]) for k in self.entity_nodes)
        arguments = tuple(Argument(ids[e], role, ids[v]) for e, role, v in self.arguments)
        relations = tuple(
            canonical_relation(ids[u], self.params.ontology.relation_types[r], ids[w])
            for u, w, r in self.relations
        )
        temporal = tuple(
            Temporal(ids[b], ids[a]) for b, a in self.temporal if b != 0
        )
        return cls(
            graph_id=self.graph_id,
            complex_event_type=self.complex_event_type,
            events=events,
            entities=entities,
            arguments=arguments,
            relations=relations,
            temporal=temporal,
            **extra,
        )


# ---------------------------------------------------------------------------
# network pieces
# ---------------------------------------------------------------------------


def _mlp(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    h = ops.relu(ops.linear(x, store[prefix + ".w1"], store[prefix + ".b1"]))
    h = ops.relu(ops.linear(h, store[prefix + ".w2"], store[prefix + ".b2"]))
    return ops.linear(h, store[prefix + ".w3"], store[prefix + ".b3"])


def _idx(values) -> np.ndarray:
    return np.asarray(values, dtype=np.intp)


def propagate(state: GenerationState) -> GenerationState:
    """Run every message-passing layer over the current graph, in place.

    Messages: argument edges ``ReLU(W_a((h_recv - h_send) ‖ a))``; relation
    and virtual entity edges ``ReLU(W_r((h_recv - h_send) ‖ r))``; temporal
    and virtual event edges ``ReLU(W_bfr h_before - W_aft h_after)``, shared
    by both endpoints.  Each message is weighted by
    ``σ(MLP(h_recv - h_send))`` and summed into a GRU update.
    """
    params = state.params
    store = params.store
    ontology = params.ontology
    virtual_rel = ontology.num_relation_types

    arg_e = [e for e, _, _ in state.arguments]
    arg_v = [v for _, _, v in state.arguments]
    arg_r = [ontology.role_index(state.types[e], role) for e, role, _ in state.arguments]
    ent_a = [u for u, _, _ in state.relations] + [p for p, _ in state.virtual_entities]
    ent_b = [w for _, w, _ in state.relations] + [q for _, q in state.virtual_entities]
    ent_r = [r for _, _, r in state.relations] + [virtual_rel] * len(state.virtual_entities)
    tmp_b = [b for b, _ in state.temporal] + [b for b, _ in state.virtual_events]
    tmp_a = [a for _, a in state.temporal] + [a for _, a in state.virtual_events]

    recv = _idx(arg_e + arg_v + ent_a + ent_b + tmp_b + tmp_a)
    send = _idx(arg_v + arg_e + ent_b + ent_a + tmp_a + tmp_b)
    n_arg, n_ent, n_tmp = len(arg_e), len(ent_a), len(tmp_b)
    h = state.latents
    n = h.shape[0]
    for layer in range(params.config.layers):
        p = f"layer{layer}."
        messages: list[Tensor] = []
        if n_arg:
            diff = ops.diff_rows(h, recv[: 2 * n_arg], send[: 2 * n_arg])
            roles = ops.take(store["role_vectors"], _idx(arg_r + arg_r))
            messages.append(ops.relu(ops.matmul(ops.concat([diff, roles], axis=1), store[p + "w_arg"])))
        if n_ent:
            lo = 2 * n_arg
            diff = ops.diff_rows(h, recv[lo : lo + 2 * n_ent], send[lo : lo + 2 * n_ent])
            rels = ops.take(store["relation_vectors"], _idx(ent_r + ent_r))
            messages.append(ops.relu(ops.matmul(ops.concat([diff, rels], axis=1), store[p + "w_rel"])))
        if n_tmp:
            before = ops.take(ops.matmul(h, store[p + "w_bfr"]), _idx(tmp_b))
            after = ops.take(ops.matmul(h, store[p + "w_aft"]), _idx(tmp_a))
            edge_msg = ops.relu(ops.sub(before, after))
            both = np.concatenate([np.arange(n_tmp), np.arange(n_tmp)])
            messages.append(ops.take(edge_msg, both))
        if messages:
            m = messages[0] if len(messages) == 1 else ops.concat(messages, axis=0)
            alpha = ops.sigmoid(_mlp(store, p + "attention", ops.diff_rows(h, recv, send)))
            agg = ops.segment_sum(ops.mul(m, alpha), recv, n)
        else:
            agg = Tensor(np.zeros_like(h.data))
        h = ops.gru_cell(
            agg, h, store[p + "gru.w_ih"], store[p + "gru.w_hh"], store[p + "gru.b_ih"], store[p + "gru.b_hh"]
        )
    state.latents = h
    return state


def _pooled(state: GenerationState) -> Tensor:
    return ops.mean(ops.take(state.latents, state.event_nodes), axis=0)


def pool_graph(state: GenerationState) -> np.ndarray:
    """Mean of the event-node latents (entities excluded)."""
    return _pooled(state).data.copy()


def _event_log_probs(state: GenerationState) -> Tensor:
    store = state.params.store
    g = ops.reshape(_pooled(state), (1, state.params.config.dim))
    return ops.log_softmax(ops.linear(g, store["event_head.w"], store["event_head.b"]))


def event_distribution(state: GenerationState) -> np.ndarray:
    """Probabilities over event types followed by EOG (last entry)."""
    with no_grad():
        return np.exp(_event_log_probs(state).data[0])


def expand_event(
    state: GenerationState,
    event_type: str,
    roles: Sequence[str] | None = None,
    event_id: str | None = None,
) -> GenerationState:
    """Add an event, one placeholder per role, argument and virtual edges (in place).

    ``roles`` defaults to every role of the event type; a subset keeps
    declaration order.  Virtual edges join the new event to every previous
    event and each placeholder to every previous entity.
    """
    ontology = state.params.ontology
    row = ontology.event_index(event_type)
    declared = [r.name for r in ontology.roles(event_type)]
    if not state.params.config.argument_generation:
        roles = []
    elif roles is None:
        roles = declared
    else:
        unknown = set(roles) - set(declared)
        if unknown:
            raise GraphError(f"{sorted(unknown)} are not roles of {event_type!r}")
        roles = [r for r in declared if r in set(roles)]
    state.step += 1
    event_id = event_id or state.fresh_id(f"{event_type}_{state.num_events + 1}")
    prior_events = list(state.event_nodes)
    node = state._add_node(event_id, EVENT, event_type, state._event_embedding(row))
    state.event_nodes.append(node)
    state.current_event = node
    state.virtual_events = [(b, node) for b in prior_events]
    state.prior_entities = list(state.entity_nodes)
    state.placeholders = []
    state.new_entities = []
    state.virtual_entities = []
    for role in roles:
        ph = state._add_node(f"{event_id}.{role}", PLACEHOLDER, None, None)
        state.placeholders.append(ph)
        state.arguments.append((node, role, ph))
        state.virtual_entities.extend((ph, v) for v in state.prior_entities)
    return state


def _argument_log_probs(state: GenerationState, placeholders: Sequence[int]) -> Tensor:
    """Rows: placeholders; columns: entity types then prior entities (shared Z)."""
    store = state.params.store
    h = state.latents
    ph = ops.take(h, _idx(placeholders))
    type_logits = ops.linear(ph, store["entity_head.w"], store["entity_head.b"])
    if state.prior_entities:
        prior = ops.take(h, _idx(state.prior_entities))
        copy_logits = ops.matmul(ops.matmul(ph, store["copy.w"]), ops.transpose(prior))
        type_logits = ops.concat([type_logits, copy_logits], axis=1)
    return ops.log_softmax(type_logits)


def argument_support(state: GenerationState) -> list[str]:
    """Labels of the argument distribution: entity type names, then entity ids."""
    return list(state.params.ontology.entity_types) + [state.ids[k] for k in state.prior_entities]


def argument_distribution(state: GenerationState, placeholder: str) -> np.ndarray:
    """Distribution over new-entity types and prior entities for one placeholder."""
    node = state.node(placeholder)
    if node not in state.placeholders:
        raise GraphError(f"{placeholder!r} is not a placeholder of the current step")
    with no_grad():
        return np.exp(_argument_log_probs(state, [node]).data[0])


def _apply_argument(state: GenerationState, node: int, choice: int, entity_id: str | None = None) -> None:
    ontology = state.params.ontology
    n_types = ontology.num_entity_types
    if choice < n_types:
        entity_type = ontology.entity_types[choice]
        state.kinds[node] = ENTITY
        state.types[node] = entity_type
        state._rename(node, entity_id or state.fresh_id(f"{entity_type}_{len(state.entity_nodes) + 1}"))
        emb = ops.take(state.params.store["entity_type_embedding"], [choice])
        state.latents = ops.add_rows(state.latents, [node], emb)
        state.entity_nodes.append(node)
        state.new_entities.append(node)
    else:
        target = state.prior_entities[choice - n_types]
        state.kinds[node] = MERGED
        state.arguments = [(e, r, target if v == node else v) for e, r, v in state.arguments]
    state.virtual_entities = [(p, q) for p, q in state.virtual_entities if p != node]
    state.placeholders = [p for p in state.placeholders if p != node]


def apply_argument_decision(
    state: GenerationState, placeholder: str, decision: NewEntity | CopyEntity, entity_id: str | None = None
) -> GenerationState:
    """Resolve a placeholder (in place): type it as a new entity or merge it."""
    node = state.node(placeholder)
    if node not in state.placeholders:
        raise GraphError(f"{placeholder!r} is not a placeholder of the current step")
    ontology = state.params.ontology
    if isinstance(decision, NewEntity):
        choice = ontology.entity_index(decision.type)
    else:
        target = state.node(decision.entity_id)
        if target not in state.prior_entities:
            raise GraphError(
                f"{decision.entity_id!r} is not an entity of the previous graph; "
                "same-step placeholders cannot be copied"
            )
        choice = ontology.num_entity_types + state.prior_entities.index(target)
    _apply_argument(state, node, choice, entity_id)
    return state


def _relation_log_probs(state: GenerationState, pairs: Sequence[tuple[int, int]]) -> Tensor:
    x = ops.diff_rows(state.latents, _idx([j for j, _ in pairs]), _idx([k for _, k in pairs]))
    return ops.log_softmax(_mlp(state.params.store, "relation", x))


def relation_distribution(state: GenerationState, new_entity: str, prior_entity: str) -> np.ndarray:
    """Probabilities over relation types followed by ``[O]`` (no edge)."""
    j, k = state.node(new_entity), state.node(prior_entity)
    if j == k:
        raise GraphError("relation distribution needs two distinct entities")
    if j not in state.new_entities or k not in state.prior_entities:
        raise GraphError(f"({new_entity}, {prior_entity}) is not a (new, prior) entity pair")
    with no_grad():
        return np.exp(_relation_log_probs(state, [(j, k)]).data[0])


def apply_relation(state: GenerationState, new_entity: str, prior_entity: str, relation: str | None) -> GenerationState:
    """Keep the pair's edge with type ``relation``, or drop it when None ([O])."""
    j, k = state.node(new_entity), state.node(prior_entity)
    if relation is not None:
        state.relations.append((j, k, state.params.ontology.relation_index(relation)))
    return state


def _temporal_log_probs(state: GenerationState, new_event: int, candidates: Sequence[int]):
    """Per-candidate ``(log p, log(1-p))`` plus the mixture weights tensor."""
    store = state.params.store
    x = ops.diff_rows(state.latents, _idx([new_event] * len(candidates)), _idx(candidates))
    log_gamma = ops.log_softmax(ops.total(_mlp(store, "temporal_gamma", x), axis=0))
    theta_logits = _mlp(store, "temporal_theta", x)
    log_on = ops.logsumexp(ops.add(ops.log_sigmoid(theta_logits), log_gamma), axis=1)
    log_off = ops.logsumexp(
        ops.add(ops.log_sigmoid(ops.scale(theta_logits, -1.0)), log_gamma), axis=1
    )
    return log_on, log_off, log_gamma, theta_logits


def temporal_edge_probabilities(
    state: GenerationState, new_event: str | None = None, candidates: Sequence[str] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """``p(prior -> new)`` per candidate and the mixture weights ``γ``.

    Candidates default to every prior real event.  ``p = Σ_b γ_b θ_b``.
    An empty candidate set yields empty arrays.
    """
    node = state.current_event if new_event is None else state.node(new_event)
    if candidates is None:
        cand = [k for k in state.event_nodes[1:] if k != node]
    else:
        cand = [state.node(c) for c in candidates]
    if not cand:
        return np.zeros(0), np.zeros(0)
    with no_grad():
        _, _, log_gamma, theta_logits = _temporal_log_probs(state, node, cand)
    gamma = np.exp(log_gamma.data)
    theta = 1.0 / (1.0 + np.exp(-theta_logits.data))
    return theta @ gamma, gamma


def apply_temporal(state: GenerationState, befores: Sequence[str]) -> GenerationState:
    """Add ``before -> current`` edges (SOG when there are none) and close the step."""
    node = state.current_event
    chosen = [state.node(b) for b in befores]
    _finish_step(state, node, chosen)
    return state


def _finish_step(state: GenerationState, node: int, befores: Sequence[int]) -> None:
    if befores:
        state.temporal.extend((b, node) for b in befores)
    else:
        state.temporal.append((0, node))
    state.virtual_events = []
    state.virtual_entities = []
    state.placeholders = []
    state.current_event = None


# ---------------------------------------------------------------------------
# the shared generation loop
# ---------------------------------------------------------------------------


@dataclass
class Factor:
    kind: str  # "event" | "argument" | "relation" | "temporal"
    key: str
    log2_prob: float


class Policy(Protocol):
    def event(self, state: GenerationState, probs: np.ndarray) -> tuple[int, str | None]: ...

    def roles(self, state: GenerationState, event_type: str) -> list[str] | None: ...

    def argument(self, state: GenerationState, placeholder: int, probs: np.ndarray) -> tuple[int, str | None]: ...

    def relation(self, state: GenerationState, new: int, prior: int, probs: np.ndarray) -> int: ...

    def temporal(self, state: GenerationState, candidates: list[int], probs: np.ndarray) -> list[int]: ...


@dataclass
class Trajectory:
    state: GenerationState
    factors: list[Factor] = field(default_factory=list)
    log_terms: list[Tensor] = field(default_factory=list)
    last_event_probs: np.ndarray | None = None

    def log2_prob(self, kinds: Sequence[str] | None = None) -> float:
        return sum(f.log2_prob for f in self.factors if kinds is None or f.kind in kinds)

    def loss(self, kinds: Sequence[str] | None = None) -> Tensor:
        """Negative log2-likelihood as a differentiable scalar."""
        terms = [t for f, t in zip(self.factors_for_terms, self.log_terms) if kinds is None or f in kinds]
        if not terms:
            return Tensor(np.asarray(0.0, dtype=self.state.params.dtype))
        return ops.scale(ops.add_n(terms), -1.0 / LOG2)

    factors_for_terms: list[str] = field(default_factory=list)


def _record(traj: Trajectory, kind: str, terms: Tensor, keys: Sequence[str], record_terms: bool) -> None:
    values = terms.data.reshape(-1)
    for key, v in zip(keys, values):
        traj.factors.append(Factor(kind, key, float(v) / LOG2))
    if record_terms and values.size:
        traj.log_terms.append(ops.total(terms))
        traj.factors_for_terms.append(kind)


def run_generation(
    params: ModelParams,
    policy: Policy,
    *,
    max_events: int | None = None,
    record: bool = False,
    graph_id: str = "generated",
    complex_event_type: str = "",
) -> Trajectory:
    """Drive one generation episode with ``policy`` choosing every decision.

    With ``record`` the log-probability tensors of the chosen decisions are
    kept on the tape so the trajectory can be differentiated.
    """
    ontology = params.ontology
    state = GenerationState(params, graph_id, complex_event_type)
    traj = Trajectory(state)
    while True:
        if max_events is not None and state.num_events >= max_events:
            break
        event_lp = _event_log_probs(state)
        probs = np.exp(event_lp.data[0])
        traj.last_event_probs = probs
        choice, event_id = policy.event(state, probs)
        if choice == params.eog_index:
            chosen_id = EOG
        else:
            chosen_id = event_id or state.fresh_id(f"{ontology.event_types[choice]}_{state.num_events + 1}")
        _record(traj, "event", ops.pick(event_lp, [0], [choice]), [f"event:{chosen_id}"], record)
        if choice == params.eog_index:
            break
        event_type = ontology.event_types[choice]
        expand_event(state, event_type, policy.roles(state, event_type), event_id=chosen_id)
        node = state.current_event
        propagate(state)

        # arguments: every placeholder scored against the same state
        placeholders = list(state.placeholders)
        if placeholders:
            arg_lp = _argument_log_probs(state, placeholders)
            arg_probs = np.exp(arg_lp.data)
            choices, keys = [], []
            for row, ph in enumerate(placeholders):
                c, entity_id = policy.argument(state, ph, arg_probs[row])
                choices.append((ph, c, entity_id))
                keys.append(f"argument:{chosen_id}:{state.ids[ph].rsplit('.', 1)[1]}")
            picked = ops.pick(arg_lp, np.arange(len(placeholders)), [c for _, c, _ in choices])
            _record(traj, "argument", picked, keys, record)
            for ph, c, entity_id in choices:
                _apply_argument(state, ph, c, entity_id)

        # relations between each new entity and each prior entity
        pairs = [(j, k) for j in state.new_entities for k in state.prior_entities]
        if pairs:
            rel_lp = _relation_log_probs(state, pairs)
            rel_probs = np.exp(rel_lp.data)
            labels = []
            for row, (j, k) in enumerate(pairs):
                labels.append(policy.relation(state, j, k, rel_probs[row]))
            keys = [_relation_key(state.ids[j], state.ids[k]) for j, k in pairs]
            _record(traj, "relation", ops.pick(rel_lp, np.arange(len(pairs)), labels), keys, record)
            for (j, k), label in zip(pairs, labels):
                if label != params.other_index:
                    state.relations.append((j, k, label))

        propagate(state)

        # temporal edges from prior real events to the new one
        candidates = [k for k in state.event_nodes[1:] if k != node]
        befores: list[int] = []
        if candidates:
            log_on, log_off, _, _ = _temporal_log_probs(state, node, candidates)
            p = np.exp(log_on.data)
            befores = policy.temporal(state, candidates, p)
            chosen = set(befores)
            mask = np.array([c in chosen for c in candidates])
            terms = ops.add(ops.mul(log_on, Tensor(mask.astype(p.dtype))), ops.mul(log_off, Tensor((~mask).astype(p.dtype))))
            keys = [f"temporal:{state.ids[c]}->{chosen_id}" for c in candidates]
            _record(traj, "temporal", terms, keys, record)
        _finish_step(state, node, befores)
    return traj


def _relation_key(a: str, b: str) -> str:
    return "relation:" + "|".join(sorted((a, b)))


# ---------------------------------------------------------------------------
# teacher forcing
# ---------------------------------------------------------------------------


class TeacherForcing:
    """Policy replaying a gold graph in its linearized order."""

    def __init__(self, graph: InstanceGraph, params: ModelParams):
        ontology = params.ontology
        validate_graph(graph, ontology)
        self.params = params
        bounded = add_boundary_nodes(graph)
        self.order = [n for n in linearize(bounded).order if n not in BOUNDARY]
        self.types = graph.event_types
        self.entity_types = graph.entity_types
        self.fillers = {(a.event, a.role): a.entity for a in graph.arguments}
        self.relations = {
            frozenset((r.head, r.tail)): ontology.relation_index(r.type) for r in graph.relations
        }
        self.gold_temporal = {(t.before, t.after) for t in graph.real_temporal()}
        self.step = 0
        # gold entity id -> state node id that stands for it
        self.alias: dict[str, str] = {}

    def event(self, state, probs):
        if self.step >= len(self.order):
            return self.params.eog_index, None
        event_id = self.order[self.step]
        self.step += 1
        return self.params.ontology.event_index(self.types[event_id]), event_id

    def roles(self, state, event_type):
        # called before expand_event, so the event being expanded is the last one chosen
        event_id = self.order[self.step - 1]
        return [r.name for r in self.params.ontology.roles(event_type) if (event_id, r.name) in self.fillers]

    def argument(self, state, placeholder, probs):
        event_id, role = state.ids[placeholder].rsplit(".", 1)
        gold = self.fillers[(event_id, role)]
        ontology = self.params.ontology
        if gold in self.alias:
            node = state.index.get(self.alias[gold])
            if node is not None and node in state.prior_entities:
                return ontology.num_entity_types + state.prior_entities.index(node), None
            # same entity fills two roles of one event: split into a fresh copy
            new_id = f"{gold}#{role}"
            return ontology.entity_index(self.entity_types[gold]), new_id
        self.alias[gold] = gold
        return ontology.entity_index(self.entity_types[gold]), gold

    def _gold_id(self, node_id: str) -> str:
        return node_id.split("#", 1)[0]

    def relation(self, state, new, prior, probs):
        key = frozenset((self._gold_id(state.ids[new]), self._gold_id(state.ids[prior])))
        return self.relations.get(key, self.params.other_index)

    def temporal(self, state, candidates, probs):
        new_id = self.order[self.step - 1]
        return [c for c in candidates if (state.ids[c], new_id) in self.gold_temporal]


@dataclass
class LogLikelihood:
    """log2 p(G) with its per-factor breakdown."""

    factors: list[Factor]
    mode: str = "full"
    last_event_probs: np.ndarray | None = None

    @property
    def kinds(self) -> tuple[str, ...]:
        return ("event",) if self.mode == "event_only" else ("event", "argument", "relation", "temporal")

    @property
    def total(self) -> float:
        return sum(f.log2_prob for f in self.factors if f.kind in self.kinds)

    @property
    def num_factors(self) -> int:
        return sum(1 for f in self.factors if f.kind in self.kinds)

    def by_kind(self) -> dict[str, float]:
        out = {k: 0.0 for k in ("event", "argument", "relation", "temporal")}
        for f in self.factors:
            out[f.kind] += f.log2_prob
        return {k: v for k, v in out.items() if k in self.kinds}

    def as_dict(self) -> dict[str, float]:
        return {f.key: 2.0 ** f.log2_prob for f in self.factors}


def teacher_force(
    graph: InstanceGraph, params: ModelParams, *, record: bool = False, max_events: int | None = None
) -> Trajectory:
    policy = TeacherForcing(graph, params)
    return run_generation(
        params,
        policy,
        max_events=max_events,
        record=record,
        graph_id=graph.graph_id,
        complex_event_type=graph.complex_event_type,
    )


def graph_log_likelihood(
    graph: InstanceGraph,
    params: ModelParams,
    mode: str = "full",
    *,
    max_events: int | None = None,
) -> LogLikelihood:
    """Teacher-forced log2 p(G) over the linearized order.

    ``mode="event_only"`` keeps only the event-type factors.  With
    ``max_events`` the generation limit is part of the model: once that many
    events exist EOG is implied and contributes no factor.
    """
    if mode not in ("full", "event_only"):
        raise ValueError(f"unknown likelihood mode {mode!r}")
    with no_grad():
        traj = teacher_force(graph, params, max_events=max_events)
    return LogLikelihood(traj.factors, mode, traj.last_event_probs)


def graph_nll(graph: InstanceGraph, params: ModelParams) -> tuple[Tensor, Trajectory]:
    """Differentiable full negative log2-likelihood of ``graph``."""
    traj = teacher_force(graph, params, record=True)
    return traj.loss(), traj


def new_state(params: ModelParams) -> GenerationState:
    """A fresh state holding only SOG."""
    return GenerationState(params)


__all__ = [
    "CopyEntity",
    "Factor",
    "GenerationState",
    "LogLikelihood",
    "ModelConfig",
    "ModelParams",
    "NewEntity",
    "SchemaGraph",
    "Trajectory",
    "apply_argument_decision",
    "apply_relation",
    "apply_temporal",
    "argument_distribution",
    "argument_support",
    "event_distribution",
    "expand_event",
    "graph_log_likelihood",
    "graph_nll",
    "init_params",
    "new_state",
    "pool_graph",
    "propagate",
    "relation_distribution",
    "run_generation",
    "teacher_force",
    "temporal_edge_probabilities",
]
