"""Greedy schema decoding and seeded graph sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SchemaGraph
from .model import GenerationState, ModelParams, Trajectory, run_generation
from .numerics import no_grad


@dataclass(frozen=True)
class DecodeLimits:
    max_events: int = 20
    temporal_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.max_events < 1:
            raise ValueError("max_events must be at least 1")
        if not 0.0 <= self.temporal_threshold <= 1.0:
            raise ValueError("temporal_threshold must lie in [0, 1]")


class GreedyPolicy:
    """Argmax at every decision; temporal edges kept at ``p >= threshold``.

    When no candidate clears the threshold the most probable one is kept so
    the new event is never isolated.
    """

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def event(self, state, probs):
        return int(np.argmax(probs)), None

    def roles(self, state, event_type):
        return None

    def argument(self, state, placeholder, probs):
        return int(np.argmax(probs)), None

    def relation(self, state, new, prior, probs):
        return int(np.argmax(probs))

    def temporal(self, state, candidates, probs):
        keep = [c for c, p in zip(candidates, probs) if p >= self.threshold]
        return keep or [candidates[int(np.argmax(probs))]]


class SamplingPolicy(GreedyPolicy):
    """Categorical and Bernoulli draws from a seeded generator."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.rng = rng

    def _draw(self, probs: np.ndarray) -> int:
        cdf = np.cumsum(probs)
        k = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        return min(k, len(probs) - 1)

    def event(self, state, probs):
        return self._draw(probs), None

    def argument(self, state, placeholder, probs):
        return self._draw(probs), None

    def relation(self, state, new, prior, probs):
        return self._draw(probs)

    def temporal(self, state, candidates, probs):
        draws = self.rng.random(len(candidates))
        keep = [c for c, p, u in zip(candidates, probs, draws) if u < p]
        return keep or [candidates[int(np.argmax(probs))]]


def kept_probabilities(traj: Trajectory) -> dict[str, float]:
    """Probability of every decision that left a trace in the output graph.

    Dropped relation pairs ([O]) and absent temporal edges are not reported.
    """
    state = traj.state
    kept_temporal = {f"temporal:{state.ids[b]}->{state.ids[a]}" for b, a in state.temporal if b != 0}
    kept_relations = {
        "relation:" + "|".join(sorted((state.ids[u], state.ids[w]))) for u, w, _ in state.relations
    }
    out = {}
    for f in traj.factors:
        if f.kind == "temporal" and f.key not in kept_temporal:
            continue
        if f.kind == "relation" and f.key not in kept_relations:
            continue
        out[f.key] = float(2.0**f.log2_prob)
    return out


def _generate(params: ModelParams, policy, limits: DecodeLimits, graph_id: str, complex_event_type: str) -> SchemaGraph:
    with no_grad():
        traj = run_generation(
            params,
            policy,
            max_events=limits.max_events,
            graph_id=graph_id,
            complex_event_type=complex_event_type,
        )
    return traj.state.to_graph(SchemaGraph, probabilities=kept_probabilities(traj))


def decode_schema(
    params: ModelParams,
    limits: DecodeLimits | None = None,
    *,
    graph_id: str = "schema",
    complex_event_type: str = "",
) -> SchemaGraph:
    """The greedy schema: argmax at every step until EOG or ``max_events``."""
    limits = limits or DecodeLimits()
    return _generate(params, GreedyPolicy(limits.temporal_threshold), limits, graph_id, complex_event_type)


def sample_graph(
    params: ModelParams,
    seed: int | np.random.Generator,
    limits: DecodeLimits | None = None,
    *,
    graph_id: str = "sample",
    complex_event_type: str = "",
) -> SchemaGraph:
    """One graph drawn from the model; identical seeds give identical graphs."""
    limits = limits or DecodeLimits()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _generate(params, SamplingPolicy(rng), limits, graph_id, complex_event_type)


def sample_graphs(params: ModelParams, n: int, seed: int, limits: DecodeLimits | None = None) -> list[SchemaGraph]:
    """``n`` graphs with independent child seeds of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [
        sample_graph(params, np.random.default_rng(child), limits, graph_id=f"sample_{k}")
        for k, child in enumerate(children)
    ]


__all__ = [
    "DecodeLimits",
    "GenerationState",
    "GreedyPolicy",
    "SamplingPolicy",
    "decode_schema",
    "kept_probabilities",
    "sample_graph",
    "sample_graphs",
]
