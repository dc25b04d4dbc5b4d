"""The ten acceptance criteria, one test each, with a printed pass/fail line."""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

import test_baseline
import test_evaluation
from helpers import random_params, report, toy_graph_, toy_ontology_
from temporal_schema.baseline import baseline_predict, extract_sequences, mine_patterns
from temporal_schema.decoding import DecodeLimits, SamplingPolicy, decode_schema, sample_graph
from temporal_schema.evaluation import (
    aggregate_reports,
    event_match,
    perplexity,
    predict_ending_events,
    score_ranking,
    sequence_match,
    truncate_endings,
)
from temporal_schema.graph import Event, GraphError, InstanceGraph, Temporal, add_boundary_nodes, strip_arguments, validate_graph
from temporal_schema.model import (
    ModelConfig,
    event_distribution,
    graph_log_likelihood,
    graph_nll,
    init_params,
    new_state,
    expand_event,
    apply_temporal,
    propagate,
    run_generation,
    temporal_edge_probabilities,
)
from temporal_schema.numerics import grad_check, no_grad
from temporal_schema.ontology import make_ontology
from temporal_schema.synth import builtin_ontology, builtin_template, generate_corpus, split_corpus
from temporal_schema.training import TrainConfig, load_checkpoint, save_checkpoint, train

# ---------------------------------------------------------------------------
# 1. likelihood normalization by exhaustive enumeration
# ---------------------------------------------------------------------------


def enumerate_mass(params, max_events):
    """Sum of trajectory probabilities by recursion over every decision.

    Drives the public step functions directly.  Returns the total mass and
    the (event types, edges, probability) leaves for independent rescoring.
    """
    ont = params.ontology
    leaves = []

    def step(state, types, edges, prob):
        if len(types) == max_events:
            leaves.append((tuple(types), frozenset(edges), prob))
            return prob
        probs = event_distribution(state)
        leaves.append((tuple(types), frozenset(edges), prob * probs[params.eog_index]))
        total = prob * probs[params.eog_index]
        k = len(types)
        for t, etype in enumerate(ont.event_types):
            grown = state.copy()
            expand_event(grown, etype, [], event_id=f"e{k}")
            propagate(grown)  # before argument decisions (none here)
            propagate(grown)  # before temporal decisions
            p_edge, _ = temporal_edge_probabilities(grown, f"e{k}", [f"e{j}" for j in range(k)])
            for mask in itertools.product([False, True], repeat=k):
                p = prob * probs[t]
                for j, on in enumerate(mask):
                    p *= p_edge[j] if on else 1.0 - p_edge[j]
                befores = [f"e{j}" for j, on in enumerate(mask) if on]
                child = grown.copy()
                apply_temporal(child, befores)
                total += step(child, types + [etype], edges | {(j, k) for j in range(k) if mask[j]}, p)
        return total

    return step(new_state(params), [], frozenset(), 1.0), leaves


def as_graph(types, edges):
    events = tuple(Event(f"e{k}", t) for k, t in enumerate(types))
    temporal = tuple(Temporal(f"e{j}", f"e{k}") for j, k in sorted(edges))
    return InstanceGraph("enum", "", events, (), (), (), temporal)


def test_criterion_1_likelihood_normalization():
    start = time.perf_counter()
    ont = make_ontology({"A": [], "B": []}, [], [])
    worst = 0.0
    rescored = 0.0
    for seed in range(4):
        for max_events in (2, 3):
            params = random_params(ont, seed=seed, dim=6)
            mass, leaves = enumerate_mass(params, max_events)
            worst = max(worst, abs(mass - 1.0))
            # every leaf equals the model's own likelihood of that trajectory
            for types, edges, prob in leaves:
                ll = graph_log_likelihood(as_graph(types, edges), params, max_events=max_events)
                rescored = max(rescored, abs(2.0**ll.total - prob))
            if max_events == 2:
                assert len(leaves) == 1 + 2 + 4 * 2  # EOG at 0 and 1 events, then 2x2 types x 2 edge states
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and rescored < 1e-9 and elapsed < 10
    report(1, ok, f"|sum p(G) - 1| = {worst:.1e}, leaf rescoring diff {rescored:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. gradient correctness
# ---------------------------------------------------------------------------


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    ont = toy_ontology_()
    graph = toy_graph_(ont)
    assert len(graph.real_events()) == 3
    params = random_params(ont, seed=0)
    assert params.dtype == np.float64
    error = grad_check(lambda s: graph_nll(graph, params)[0], params.store, 1e-5, samples=200, seed=0)
    elapsed = time.perf_counter() - start
    report(2, error < 1e-4 and elapsed < 60, f"max relative error {error:.2e} over 200 coordinates, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. distribution sanity on randomized states
# ---------------------------------------------------------------------------


class CheckingPolicy(SamplingPolicy):
    """Samples like the model while auditing every distribution it is shown."""

    def __init__(self, rng, stats):
        super().__init__(rng)
        self.stats = stats

    def _check_sum(self, probs):
        self.stats["max_sum_error"] = max(self.stats["max_sum_error"], abs(float(np.sum(probs)) - 1.0))
        self.stats["min_prob"] = min(self.stats["min_prob"], float(np.min(probs)))

    def event(self, state, probs):
        self.stats["states"] += 1
        self._check_sum(probs)
        return super().event(state, probs)

    def argument(self, state, placeholder, probs):
        self._check_sum(probs)
        return super().argument(state, placeholder, probs)

    def relation(self, state, new, prior, probs):
        self._check_sum(probs)
        return super().relation(state, new, prior, probs)

    def temporal(self, state, candidates, probs):
        self.stats["temporal_out_of_range"] += int(np.sum((probs < 0.0) | (probs > 1.0)))
        params = state.params
        if params.config.mixtures == 1:
            s = params.store
            h = state.latents.data
            x = h[[state.current_event] * len(candidates)] - h[candidates]
            for k in (1, 2):
                x = np.maximum(x @ s[f"temporal_theta.w{k}"].data + s[f"temporal_theta.b{k}"].data, 0.0)
            theta = (x @ s["temporal_theta.w3"].data + s["temporal_theta.b3"].data)[:, 0]
            closed = np.exp(-np.logaddexp(0.0, -theta))
            self.stats["bernoulli_checks"] += len(candidates)
            self.stats["bernoulli_max_diff"] = max(self.stats["bernoulli_max_diff"], float(np.max(np.abs(closed - probs))))
        return super().temporal(state, candidates, probs)


def test_criterion_3_distribution_sanity():
    stats = {"states": 0, "max_sum_error": 0.0, "min_prob": 1.0, "temporal_out_of_range": 0,
             "bernoulli_checks": 0, "bernoulli_max_diff": 0.0}
    ontologies = [toy_ontology_(), make_ontology({"A": ["x", "y"], "B": ["x"], "C": []}, ["P", "Q", "R"], ["S", "T"])]
    seed = 0
    while stats["states"] < 10_000:
        ont = ontologies[seed % 2]
        params = random_params(ont, seed=seed, dim=4 + seed % 5, mixtures=1 + seed % 3)
        scale = [0.5, 1.0, 3.0][seed % 3]  # include sharp distributions
        for _, t in params.store.items():
            t.data *= scale
        rng = np.random.default_rng(seed)
        for _ in range(20):
            with no_grad():
                traj = run_generation(params, CheckingPolicy(rng, stats), max_events=8)
            validate_graph(traj.state.to_graph(), ont)
        seed += 1
    ok = (
        stats["max_sum_error"] < 1e-9
        and stats["min_prob"] >= 0.0
        and stats["temporal_out_of_range"] == 0
        and stats["bernoulli_checks"] > 0
        and stats["bernoulli_max_diff"] == 0.0
    )
    report(
        3,
        ok,
        f"{stats['states']} states, max |sum-1| {stats['max_sum_error']:.1e}, "
        f"{stats['bernoulli_checks']} single-component temporal checks, max diff {stats['bernoulli_max_diff']:.1e}",
    )


# ---------------------------------------------------------------------------
# 4-6. planted-schema recovery, prediction and ablation
# ---------------------------------------------------------------------------

PLANTED_CONFIG = dict(learning_rate=1e-3, epochs=30, model=ModelConfig(dim=32))


@pytest.fixture(scope="module")
def planted():
    ontology = builtin_ontology()
    schema = builtin_template(ontology)
    graphs, _ = generate_corpus(schema, 100, seed=0, ontology=ontology)
    splits = split_corpus(graphs, dev=0.1, test=0.2)
    return ontology, schema, splits


@pytest.fixture(scope="module")
def full_models(planted):
    ontology, _, splits = planted
    out = {}
    for seed in range(3):
        start = time.perf_counter()
        result = train(splits["train"], splits["dev"], ontology, TrainConfig(seed=seed, **PLANTED_CONFIG))
        out[seed] = (result.params, time.perf_counter() - start)
    return out


def test_criterion_4_planted_schema_recovery(planted, full_models):
    ontology, schema, _ = planted
    params, seconds = full_models[0]
    decoded = decode_schema(params)
    validate_graph(decoded, ontology)
    ev = event_match(decoded, schema.template).f1
    seq = sequence_match(decoded, schema.template, 2).f1
    ok = ev >= 0.95 and seq >= 0.85 and seconds < 15 * 60
    report(4, ok, f"event match F1 {ev:.4f}, sequence (l=2) F1 {seq:.4f}, trained in {seconds:.0f}s "
                  f"({PLANTED_CONFIG['epochs']} epochs)")


def test_criterion_5_prediction_under_planting(planted, full_models):
    ontology, _, splits = planted
    params, _ = full_models[0]
    held_out = splits["test"]
    model = aggregate_reports([predict_ending_events(params, g)[1] for g in held_out])
    patterns = mine_patterns(extract_sequences(splits["train"], seed=0), min_support=2)
    rows = []
    for g in held_out:
        truncated, gold = truncate_endings(g)
        pred = baseline_predict(patterns, truncated, ontology.event_types)
        rows.append(score_ranking(g.graph_id, pred.ranking, gold, pred.flagged))
    base = aggregate_reports(rows)
    ok = model.mrr >= 0.8 and model.hits1 > base.hits1
    report(5, ok, f"model MRR {model.mrr:.3f} HITS@1 {model.hits1:.3f}; baseline MRR {base.mrr:.3f} "
                  f"HITS@1 {base.hits1:.3f} on {len(held_out)} held-out graphs")


def test_criterion_6_ablation_direction(planted, full_models):
    ontology, _, splits = planted
    test = splits["test"]
    stripped_train = [strip_arguments(g) for g in splits["train"]]
    stripped_dev = [strip_arguments(g) for g in splits["dev"]]
    full, ablated = [], []
    for seed in range(3):
        full.append(perplexity(full_models[seed][0], test, "event_only"))
        config = TrainConfig(seed=seed, learning_rate=PLANTED_CONFIG["learning_rate"], epochs=PLANTED_CONFIG["epochs"],
                             model=ModelConfig(dim=32, argument_generation=False))
        params = train(stripped_train, stripped_dev, ontology, config).params
        ablated.append(perplexity(params, test, "event_only"))
    ok = np.mean(ablated) > np.mean(full)
    report(6, ok, f"event-only perplexity full {np.mean(full):.3f} {np.round(full, 3).tolist()} vs "
                  f"no-argument {np.mean(ablated):.3f} {np.round(ablated, 3).tolist()}")


# ---------------------------------------------------------------------------
# 7. metric fixtures
# ---------------------------------------------------------------------------


def test_criterion_7_metric_fixtures():
    fixtures = sorted(n for n in dir(test_evaluation) if n.startswith("test_fixture_"))
    failed = []
    for name in fixtures:
        try:
            getattr(test_evaluation, name)()
        except AssertionError:
            failed.append(name)
    report(7, len(fixtures) >= 10 and not failed, f"{len(fixtures) - len(failed)}/{len(fixtures)} hand-computed fixtures")


# ---------------------------------------------------------------------------
# 8. miner against brute force
# ---------------------------------------------------------------------------


def test_criterion_8_miner_correctness():
    rng = np.random.default_rng(0)
    checked = 0
    mismatches = 0
    # exhaustive over a two-letter alphabet for small DBs
    seqs = [s for n in range(1, 4) for s in itertools.product("AB", repeat=n)]
    for size in range(1, 4):
        for db in itertools.combinations_with_replacement(seqs, size):
            for min_support in range(1, size + 2):
                checked += 1
                mismatches += dict(mine_patterns(db, min_support)) != test_baseline.brute_force(db, min_support)
    # random DBs up to 6 sequences of length up to 5 over three letters
    for _ in range(3000):
        db = [tuple(rng.choice(list("ABC"), size=int(rng.integers(1, 6)))) for _ in range(int(rng.integers(1, 7)))]
        min_support = int(rng.integers(1, 5))
        checked += 1
        mismatches += dict(mine_patterns(db, min_support)) != test_baseline.brute_force(db, min_support)
    report(8, mismatches == 0, f"{checked} databases, {mismatches} mismatches against brute force")


# ---------------------------------------------------------------------------
# 9. determinism and checkpoint round trip
# ---------------------------------------------------------------------------


def test_criterion_9_determinism_and_round_trip(tmp_path):
    ontology = builtin_ontology()
    graphs, _ = generate_corpus(builtin_template(ontology), 8, seed=1, ontology=ontology)
    config = TrainConfig(learning_rate=1e-2, epochs=3, seed=4, batch_size=2, model=ModelConfig(dim=8))
    runs = [train(graphs[:6], graphs[6:], ontology, config) for _ in range(2)]
    logs = [[{k: v for k, v in row.items() if k != "wallclock_s"} for row in r.log] for r in runs]
    same_log = logs[0] == logs[1]

    params = runs[0].params
    save_checkpoint(params, tmp_path / "a.json")
    loaded = load_checkpoint(tmp_path / "a.json", ontology, np.float32)
    save_checkpoint(loaded, tmp_path / "b.json")
    same_bytes = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    stored = params.copy(np.float32)
    same_values = all(
        np.array_equal(loaded.store[name].data, t.data) and loaded.store[name].data.dtype == t.data.dtype
        for name, t in stored.store.items()
    )
    same_ll = all(
        graph_log_likelihood(g, loaded).total == graph_log_likelihood(g, stored).total for g in graphs
    )
    report(9, same_log and same_bytes and same_values and same_ll,
           f"training logs identical: {same_log}; checkpoint bytes stable: {same_bytes}; "
           f"float32 values bit-identical: {same_values}; "
           f"float32 likelihoods identical: {same_ll}")


# ---------------------------------------------------------------------------
# 10. structural invariants of sampled graphs
# ---------------------------------------------------------------------------


def test_criterion_10_structural_invariants():
    ontologies = [builtin_ontology(), toy_ontology_()]
    param_sets = []
    for k in range(10):
        ont = ontologies[k % 2]
        if k == 0:
            param_sets.append(init_params(ont, ModelConfig(dim=4), zero=True))
        else:
            param_sets.append(random_params(ont, seed=k, dim=4 + k % 4, mixtures=1 + k % 2))
    count = failures = 0
    for k, params in enumerate(param_sets):
        for j in range(100):
            g = sample_graph(params, 1000 * k + j, DecodeLimits(max_events=10))
            try:
                validate_graph(g, params.ontology, require_connected=len(g.real_events()) > 1)
                validate_graph(add_boundary_nodes(g), params.ontology)
            except GraphError:
                failures += 1
            count += 1
    report(10, failures == 0 and count == 1000, f"{count} sampled graphs, {failures} invalid")

