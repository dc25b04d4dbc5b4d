"""Teacher-forced NLL training with dev-set model selection, and checkpoints."""

from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .graph import InstanceGraph, validate_graph
from .model import ModelConfig, ModelParams, graph_log_likelihood, graph_nll, init_params
from .numerics import ParamStore, backward
from .ontology import Ontology

FORMAT_VERSION = 1
PRECISIONS = {"float64": np.float64, "float32": np.float32}


class CheckpointError(ValueError):
    """A checkpoint that cannot be loaded for the given ontology."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    gradient_clip_norm: float | None = 5.0
    precision: str = "float64"
    patience: int | None = None
    checkpoint_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_epoch: int
    initial_dev_nll: float


class Adam:
    """Adaptive moment estimation over a :class:`ParamStore`."""

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, t in self.store.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(t.data.dtype)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def mean_nll(params: ModelParams, graphs: Sequence[InstanceGraph]) -> float:
    """Mean full negative log2-likelihood per graph."""
    return -sum(graph_log_likelihood(g, params).total for g in graphs) / len(graphs)


def _graph_loss(graph: InstanceGraph, params: ModelParams):
    loss, traj = graph_nll(graph, params)
    value = float(loss.data)
    if not math.isfinite(value):
        step = 0
        for f in traj.factors:
            if f.kind == "event":
                step += 1
            if not math.isfinite(f.log2_prob):
                raise FloatingPointError(
                    f"non-finite loss on graph {graph.graph_id!r} at step {step} ({f.key})"
                )
        raise FloatingPointError(f"non-finite loss on graph {graph.graph_id!r}")
    return loss, value


def train(
    train_graphs: Sequence[InstanceGraph],
    dev_graphs: Sequence[InstanceGraph],
    ontology: Ontology,
    config: TrainConfig | None = None,
    *,
    init: ModelParams | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minimize the summed NLL in bits; keep the parameters with the best dev NLL.

    An empty dev set selects on the epoch's mean training NLL instead.
    """
    config = config or TrainConfig()
    if not train_graphs:
        raise ValueError("training set is empty")
    for g in list(train_graphs) + list(dev_graphs):
        validate_graph(g, ontology)
    params = init.copy(config.dtype) if init is not None else init_params(
        ontology, config.model, seed=config.seed, dtype=config.dtype
    )
    store = params.store
    optimizer = Adam(store, config.learning_rate)
    rng = np.random.default_rng(config.seed)

    select_on = dev_graphs if dev_graphs else train_graphs
    initial = mean_nll(params, select_on)
    best_value, best_epoch = initial, 0
    best = {name: t.data.copy() for name, t in store.items()}
    log: list[dict] = []
    stale = 0
    checkpoint_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train_graphs))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            grads: dict[str, np.ndarray] | None = None
            for k in batch:
                loss, value = _graph_loss(train_graphs[k], params)
                total += value
                g = backward(loss, store)
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] = grads[name] + g[name]
            clip_global_norm(grads, config.gradient_clip_norm)
            optimizer.step(grads)
        train_nll = total / len(train_graphs)
        dev_nll = mean_nll(params, dev_graphs) if dev_graphs else float("nan")
        row = {
            "epoch": epoch,
            "train_nll_bits": train_nll,
            "dev_nll_bits": dev_nll,
            "wallclock_s": time.perf_counter() - start,
        }
        log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        value = dev_nll if dev_graphs else train_nll
        if value < best_value:
            best_value, best_epoch, stale = value, epoch, 0
            best = {name: t.data.copy() for name, t in store.items()}
            if checkpoint_dir is not None:
                save_checkpoint(params, checkpoint_dir / "best.json")
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break

    store.load_values(best)
    return TrainResult(params, log, best_epoch, initial)


def format_log_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_dict(params: ModelParams) -> dict:
    records = []
    for name, t in params.store.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(t.data.shape), "values": base64.b64encode(raw).decode("ascii")})
    return {
        "format_version": FORMAT_VERSION,
        "ontology_fingerprint": params.ontology.fingerprint,
        "hyperparameters": params.config.to_dict(),
        "parameters": records,
    }


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write parameters as little-endian float32 (the stored precision)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(checkpoint_dict(params)))
    tmp.replace(path)


def load_checkpoint(path: str | Path, ontology: Ontology, dtype=np.float64) -> ModelParams:
    text = Path(path).read_bytes().decode("utf-8", errors="replace")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise CheckpointError(f"checkpoint parse error at byte offset {offset}: {exc.msg}") from exc
    return params_from_checkpoint(data, ontology, dtype)


def params_from_checkpoint(data: dict, ontology: Ontology, dtype=np.float64) -> ModelParams:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    if data.get("ontology_fingerprint") != ontology.fingerprint:
        raise CheckpointError("ontology fingerprint mismatch: checkpoint was trained on a different ontology")
    try:
        config = ModelConfig(**data["hyperparameters"])
    except TypeError as exc:
        raise CheckpointError(f"bad hyperparameters: {exc}") from exc
    params = init_params(ontology, config, dtype=dtype, zero=True)
    stored = {}
    for record in data["parameters"]:
        values = np.frombuffer(base64.b64decode(record["values"]), dtype="<f4")
        stored[record["name"]] = values.reshape(record["shape"])
    missing = [name for name in params.store if name not in stored]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing[:5]}")
    try:
        params.store.load_values(stored)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return params
