"""Command-line entry point: ``temporal-schema <command> [options]``.

Exit codes: 0 success, 1 invalid input (bad flags, files, graphs, ontology
or checkpoint), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .graph import GraphError, InstanceGraph, dumps_graph, load_corpus, read_graph, write_corpus, write_graph
from .ontology import Ontology, OntologyError, read_ontology

ONTOLOGY_ENV = "TEMPORAL_SCHEMA_ONTOLOGY"


class UsageError(Exception):
    """Invalid command-line usage; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _ontology(args) -> Ontology:
    path = args.ontology or os.environ.get(ONTOLOGY_ENV)
    if path:
        return read_ontology(path)
    from .synth import builtin_ontology

    return builtin_ontology()


def _write_json(path: str | None, payload: Any) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _announce_seed(seed: int) -> None:
    print(f"seed: {seed}")


def _graphs(args, ontology: Ontology, split: str) -> list[InstanceGraph]:
    if getattr(args, "graphs", None):
        return [read_graph(p, ontology) for p in args.graphs]
    if not getattr(args, "corpus", None):
        raise UsageError("give --corpus DIR or --graphs FILE...")
    graphs = load_corpus(args.corpus, ontology)[split]
    if not graphs:
        raise UsageError(f"corpus split {split!r} is empty")
    return graphs


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_params(args, ontology: Ontology):
    from .training import load_checkpoint

    return load_checkpoint(args.checkpoint, ontology)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    ontology = _ontology(args)
    from .graph import ingest_graph

    outputs = []
    for path in args.inputs:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            graph = ingest_graph(Path(path).read_text(encoding="utf-8"), ontology)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        outputs.append(graph)
        print(f"{path}: {len(graph.real_events())} events, {len(graph.entities)} entities, "
              f"{len(graph.temporal)} temporal edges")
    if args.out:
        out = Path(args.out)
        if len(outputs) == 1 and out.suffix == ".json":
            write_graph(outputs[0], out)
        else:
            out.mkdir(parents=True, exist_ok=True)
            for g in outputs:
                write_graph(g, out / f"{g.graph_id or 'graph'}.json")
    return 0


def cmd_synth(args) -> int:
    from .synth import builtin_template, generate_corpus, read_planted, split_corpus, template_dict

    _announce_seed(args.seed)
    ontology = _ontology(args)
    schema = read_planted(args.template, ontology) if args.template else builtin_template(ontology)
    graphs, alignments = generate_corpus(schema, args.n, args.seed, ontology=ontology)
    splits = split_corpus(graphs, args.dev, args.test)
    if not args.out:
        raise UsageError("synth needs --out DIR")
    write_corpus(args.out, splits)
    _write_json(str(Path(args.out) / "alignment.json"), alignments)
    _write_json(str(Path(args.out) / "template.json"), template_dict(schema))
    print(" ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return 0


def cmd_train(args) -> int:
    from .graph import strip_arguments
    from .model import ModelConfig
    from .training import TrainConfig, format_log_row, save_checkpoint, train

    _announce_seed(args.seed)
    ontology = _ontology(args)
    corpus = load_corpus(args.corpus, ontology)
    model = ModelConfig(
        dim=args.dim, layers=args.layers, mixtures=args.mixtures, argument_generation=not args.no_arguments
    )
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        gradient_clip_norm=args.clip if args.clip > 0 else None,
        precision=args.precision,
        patience=args.patience,
        checkpoint_dir=args.checkpoint_dir,
        model=model,
    )
    train_set, dev_set = corpus["train"], corpus["dev"]
    if args.no_arguments:
        train_set = [strip_arguments(g) for g in train_set]
        dev_set = [strip_arguments(g) for g in dev_set]
    if not args.out:
        raise UsageError("train needs --out CHECKPOINT")
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as log:

        def emit(row: dict) -> None:
            line = format_log_row(row)
            print(line, flush=True)
            log.write(line + "\n")

        result = train(train_set, dev_set, ontology, config, on_epoch=emit)
    save_checkpoint(result.params, args.out)
    print(f"best epoch {result.best_epoch}; checkpoint {args.out}; log {log_path}")
    return 0


def cmd_decode(args) -> int:
    from .decoding import DecodeLimits, decode_schema

    ontology = _ontology(args)
    params = _load_params(args, ontology)
    schema = decode_schema(params, DecodeLimits(args.max_events, args.threshold))
    text = dumps_graph(schema)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_sample(args) -> int:
    from .decoding import DecodeLimits, sample_graph

    _announce_seed(args.seed)
    ontology = _ontology(args)
    params = _load_params(args, ontology)
    limits = DecodeLimits(args.max_events, 0.5)
    children = np.random.SeedSequence(args.seed).spawn(args.n)
    jobs = list(enumerate(children))
    graphs = _map(
        lambda kc: sample_graph(params, np.random.default_rng(kc[1]), limits, graph_id=f"sample_{kc[0]}"),
        jobs,
        args.threads,
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for g in graphs:
            write_graph(g, out / f"{g.graph_id}.json")
    for g in graphs:
        print(f"{g.graph_id}: {' '.join(e.type for e in g.events)}")
    return 0


def cmd_eval_ppl(args) -> int:
    from .evaluation import perplexity

    ontology = _ontology(args)
    params = _load_params(args, ontology)
    graphs = _graphs(args, ontology, args.split)
    value = perplexity(params, graphs, args.mode, args.normalization)
    print(f"{'mode':<12}{'normalization':<16}{'graphs':>8}{'perplexity':>16}")
    print(f"{args.mode:<12}{args.normalization:<16}{len(graphs):>8}{value:>16.6g}")
    _write_json(args.out, {"metric": "perplexity", "value": value, "mode": args.mode,
                           "normalization": args.normalization, "counts": {"graphs": len(graphs)}})
    return 0


def cmd_eval_match(args) -> int:
    from .evaluation import match_report

    ontology = _ontology(args)
    pred = read_graph(args.pred, ontology)
    gold = read_graph(args.gold, ontology)
    report = match_report(pred, gold, closure=args.closure)
    print(report.table())
    _write_json(args.out, report.as_dict())
    return 0


def cmd_predict(args) -> int:
    from .evaluation import aggregate_reports, predict_ending_events

    ontology = _ontology(args)
    params = _load_params(args, ontology)
    graphs = _graphs(args, ontology, args.split)
    rows = _map(lambda g: predict_ending_events(params, g)[1], graphs, args.threads)
    report = aggregate_reports(rows)
    print(f"{'metric':<10}{'value':>10}")
    print(f"{'MRR':<10}{report.mrr:>10.4f}")
    print(f"{'HITS@1':<10}{report.hits1:>10.4f}")
    _write_json(args.out, report.as_dict())
    return 0


def cmd_baseline_mine(args) -> int:
    from .baseline import baseline_schema, extract_sequences, mine_patterns

    _announce_seed(args.seed)
    ontology = _ontology(args)
    graphs = _graphs(args, ontology, args.split)
    db = extract_sequences(graphs, args.seed, args.walks)
    patterns = mine_patterns(db, args.min_support, args.max_length)
    for pattern, support in patterns[: args.show]:
        print(f"{support:>8}  {' -> '.join(pattern)}")
    _write_json(args.out, [{"pattern": list(p), "support": s} for p, s in patterns])
    if args.schema_out and patterns:
        schema = baseline_schema(patterns, graphs, min_length=args.min_length)
        Path(args.schema_out).write_text(dumps_graph(schema), encoding="utf-8")
    return 0


def cmd_baseline_predict(args) -> int:
    from .baseline import baseline_predict
    from .evaluation import aggregate_reports, score_ranking, truncate_endings

    ontology = _ontology(args)
    records = json.loads(Path(args.patterns).read_text(encoding="utf-8"))
    patterns = [(tuple(r["pattern"]), int(r["support"])) for r in records]
    graphs = _graphs(args, ontology, args.split)
    rows = []
    for g in graphs:
        truncated, gold = truncate_endings(g)
        pred = baseline_predict(patterns, truncated, ontology.event_types, seed=args.seed)
        rows.append(score_ranking(g.graph_id, pred.ranking, gold, pred.flagged))
    report = aggregate_reports(rows)
    flagged = sum(r.flagged for r in rows)
    print(f"{'metric':<10}{'value':>10}")
    print(f"{'MRR':<10}{report.mrr:>10.4f}")
    print(f"{'HITS@1':<10}{report.hits1:>10.4f}")
    if flagged:
        print(f"{flagged} graph(s) used the uniform fallback ranking")
    _write_json(args.out, report.as_dict())
    return 0


def cmd_gradcheck(args) -> int:
    from .model import ModelConfig, graph_nll, init_params
    from .numerics import grad_check

    _announce_seed(args.seed)
    ontology = _ontology(args)
    if args.graph:
        graph = read_graph(args.graph, ontology)
    else:
        from .graph import remove_events, topological_order
        from .synth import builtin_template, generate_corpus

        if args.ontology or os.environ.get(ONTOLOGY_ENV):
            raise UsageError("gradcheck with a custom ontology needs --graph FILE")
        full = generate_corpus(builtin_template(ontology), 1, args.seed, ontology=ontology)[0][0]
        graph = remove_events(full, topological_order(full)[3:])
    params = init_params(ontology, ModelConfig(dim=args.dim, hidden=args.dim), seed=args.seed)
    rng = np.random.default_rng(args.seed)
    for _, t in params.store.items():
        if t.data.ndim == 1:  # nonzero biases keep ReLUs off their kinks
            t.data[:] = rng.normal(0.0, 0.1, t.data.shape)
    error = grad_check(lambda s: graph_nll(graph, params)[0], params.store, args.epsilon,
                       samples=args.samples, seed=args.seed, method=args.method)
    status = "pass" if error < args.tolerance else "FAIL"
    print(f"max relative error {error:.3e} over {args.samples} coordinates: {status}")
    _write_json(args.out, {"metric": "grad_check", "value": error, "counts": {"samples": args.samples}})
    return 0 if error < args.tolerance else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--ontology", help=f"ontology JSON (default: ${ONTOLOGY_ENV} or the bundled IED ontology)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output path")
    common.add_argument("--threads", type=int, default=1, help="worker threads for parallel stages")

    parser = _Parser(prog="temporal-schema", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(fn=fn)
        return p

    def graph_source(p, split: str) -> None:
        p.add_argument("--corpus", help="corpus directory with manifest.json")
        p.add_argument("--split", default=split, choices=["train", "dev", "test"])
        p.add_argument("--graphs", nargs="+", help="graph files instead of a corpus")

    p = add("ingest", cmd_ingest, "validate and canonicalize instance-graph files")
    p.add_argument("inputs", nargs="+")

    p = add("synth", cmd_synth, "generate a planted-schema corpus")
    p.add_argument("--template", help="planted template JSON (default: bundled IED template)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--dev", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)

    p = add("train", cmd_train, "train the model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--mixtures", type=int, default=2)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--clip", type=float, default=5.0, help="global gradient norm limit (0 disables)")
    p.add_argument("--precision", choices=["float64", "float32"], default="float64")
    p.add_argument("--patience", type=int)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log", help="training log path (default: next to the checkpoint)")
    p.add_argument("--no-arguments", action="store_true", help="ablation: events and temporal edges only")

    p = add("decode", cmd_decode, "greedy schema decoding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-events", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("sample", cmd_sample, "sample graphs from the model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--max-events", type=int, default=20)

    p = add("eval-ppl", cmd_eval_ppl, "instance graph perplexity")
    p.add_argument("--checkpoint", required=True)
    graph_source(p, "test")
    p.add_argument("--mode", choices=["full", "event", "event_only"], default="full")
    p.add_argument("--normalization", choices=["per_graph", "per_factor"], default="per_graph")

    p = add("eval-match", cmd_eval_match, "schema matching metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--closure", action="store_true", help="sequences over the transitive closure")

    p = add("predict", cmd_predict, "ending-event prediction with the model")
    p.add_argument("--checkpoint", required=True)
    graph_source(p, "test")

    p = add("baseline-mine", cmd_baseline_mine, "random walks + PrefixSpan")
    graph_source(p, "train")
    p.add_argument("--walks", type=int, default=10, help="walks per event node")
    p.add_argument("--min-support", type=int, default=2)
    p.add_argument("--max-length", type=int)
    p.add_argument("--min-length", type=int, default=1, help="shortest pattern usable as the schema")
    p.add_argument("--schema-out", help="write the chain schema here")
    p.add_argument("--show", type=int, default=10)

    p = add("baseline-predict", cmd_baseline_predict, "ending-event prediction with mined patterns")
    p.add_argument("--patterns", required=True)
    graph_source(p, "test")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check of the model NLL")
    p.add_argument("--graph", help="graph file (default: first three events of a bundled-template graph)")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--method", choices=["central", "five-point", "ridders"], default="central")
    return parser


VALIDATION_ERRORS = (UsageError, GraphError, OntologyError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)


def main(argv: Sequence[str] | None = None) -> int:
    from .training import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.fn(args)
    except (*VALIDATION_ERRORS, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
