"""Training, evaluation and instrumentation for the synthetic tasks."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .datagen import CyclePairSample, RootedTreeSample, Sample
from .errors import ConfigError, DivergenceError
from .graph import BROADCAST, ISOLATE, LISTEN, STANDARD, Graph, GraphBatch, batch_graphs
from .model import ACTION_NAMES, CoGnnModel, ModelConfig, ForwardResult
from .tensor import Adam, Tensor, backward, log_softmax, no_grad, tabs

log = logging.getLogger(__name__)

TASK_KINDS = {"root-neighbors": "node-regression", "cycles": "graph-classification"}
FAMILIES = ("cognn", "baseline-sum", "baseline-mean", "baseline-gcn")
DEFAULT_EVAL_SEEDS = 10


@dataclass
class RunConfig:
    """Everything that determines a training run. Defaults follow the RootNeighbors setup."""

    task: str = "root-neighbors"
    family: str = "cognn"
    env_layers: int = 1
    env_dim: int = 16
    env_agg: str = "mean"
    act_layers: int = 1
    act_dim: int = 8
    act_agg: str = "sum"
    activation: str = "relu"
    dropout: float = 0.0
    lr: float = 1e-3
    epochs: int = 10000
    batch_size: int | None = None
    tau_mode: str = "learned"
    tau0: float = 0.1
    temp: float = 1.0
    pooling: str = "sum"
    seed: int = 0
    eval_every: int = 10
    select_seeds: int = 3
    eval_seeds: int = DEFAULT_EVAL_SEEDS

    def __post_init__(self):
        if self.task not in TASK_KINDS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {sorted(TASK_KINDS)}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.env_layers < 0 or self.act_layers < 0:
            raise ConfigError("depths must be >= 0")
        if self.env_dim < 1 or self.act_dim < 1:
            raise ConfigError("dims must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.tau_mode not in ("learned", "fixed"):
            raise ConfigError("tau_mode must be 'learned' or 'fixed'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if min(self.eval_every, self.select_seeds, self.eval_seeds) < 1:
            raise ConfigError("eval_every, select_seeds and eval_seeds must be >= 1")

    @property
    def kind(self) -> str:
        return TASK_KINDS[self.task]

    def model_config(self, in_dim: int) -> ModelConfig:
        regression = self.kind == "node-regression"
        return ModelConfig(
            task=self.kind,
            family=self.family,
            in_dim=in_dim,
            out_dim=5 if regression else 2,
            env_layers=self.env_layers,
            env_dim=self.env_dim,
            env_agg=self.env_agg,
            act_layers=self.act_layers,
            act_dim=self.act_dim,
            act_agg=self.act_agg,
            activation=self.activation,
            dropout=self.dropout,
            learn_temp=self.tau_mode == "learned",
            tau0=self.tau0,
            temp=self.temp,
            pooling=self.pooling,
            decoder_layers=1 if regression else 2,
        )


@dataclass
class EvalResult:
    mean: float
    stderr: float
    values: list[float]


@dataclass
class MetricsLog:
    metric: str
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    test_metric: list[float] = field(default_factory=list)
    retention: list[list[float]] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    best_epoch: int = -1
    final: dict[str, EvalResult] = field(default_factory=dict)

    def append(self, epoch: int, loss: float, val: float, test: float, ratios: list[float], seconds: float) -> None:
        if epoch != len(self.epochs):
            raise ValueError(f"epoch {epoch} out of order (expected {len(self.epochs)})")
        self.epochs.append(epoch)
        self.train_loss.append(loss)
        self.val_metric.append(val)
        self.test_metric.append(test)
        self.retention.append(ratios)
        self.wall_clock.append(seconds)

    def to_csv(self, path) -> None:
        layers = max((len(r) for r in self.retention), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_metric", "test_metric"] + [f"ratio_layer_{i}" for i in range(layers)])
            for i, e in enumerate(self.epochs):
                w.writerow([e, repr(self.train_loss[i]), _fmt(self.val_metric[i]), _fmt(self.test_metric[i])]
                           + [repr(r) for r in self.retention[i]])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(x)


# -- data preparation ------------------------------------------------------------------


@dataclass
class Prepared:
    batch: GraphBatch
    targets: np.ndarray
    kind: str

    @property
    def size(self) -> int:
        return self.batch.num_graphs


def prepare(samples: Sequence[Sample]) -> Prepared:
    if not samples:
        raise ConfigError("empty sample list")
    batch = batch_graphs([s.graph for s in samples])
    if isinstance(samples[0], RootedTreeSample):
        return Prepared(batch, np.stack([s.target for s in samples]), "node-regression")
    return Prepared(batch, np.array([s.label for s in samples], dtype=np.int64), "graph-classification")


def _as_prepared(data) -> Prepared:
    return data if isinstance(data, Prepared) else prepare(data)


# -- predictors ----------------------------------------------------------------------------


def predict(model, batch: GraphBatch, rng=None, fixed_actions=None) -> np.ndarray:
    if isinstance(model, CoGnnModel):
        with no_grad():
            return model.forward(batch, rng, training=False, fixed_actions=fixed_actions).prediction.data
    return model.predict(batch, rng)


def _stochastic(model) -> bool:
    return isinstance(model, CoGnnModel) and model.config.is_cooperative or getattr(model, "stochastic", False)


class ZeroPredictor:
    """Predicts the zero vector for every graph."""

    task = "node-regression"
    stochastic = False

    def __init__(self, dim: int = 5):
        self.dim = dim

    def predict(self, batch: GraphBatch, rng=None) -> np.ndarray:
        return np.zeros((batch.num_graphs, self.dim))


class CoinFlipPredictor:
    """Random logits; each graph's class is a fair coin flip per evaluation seed."""

    task = "graph-classification"
    stochastic = True

    def predict(self, batch: GraphBatch, rng) -> np.ndarray:
        return rng.standard_normal((batch.num_graphs, 2))


def _task(model) -> str:
    return model.config.task if isinstance(model, CoGnnModel) else model.task


def _eval_rngs(seeds: int):
    return [rngmod.stream(i, "eval") for i in range(seeds)]


def _summarise(values: list[float]) -> EvalResult:
    arr = np.asarray(values, dtype=np.float64)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return EvalResult(float(arr.mean()), se, [float(v) for v in arr])


def evaluate(model, data, seeds: int = DEFAULT_EVAL_SEEDS, fixed_actions=None) -> EvalResult:
    """MAE (regression) or accuracy (classification) averaged over ``seeds`` action draws."""
    prep = _as_prepared(data)
    if _task(model) != prep.kind:
        raise ConfigError(f"model task {_task(model)!r} does not match data task {prep.kind!r}")
    rngs = _eval_rngs(seeds if _stochastic(model) and fixed_actions is None else 1)
    values = []
    for r in rngs:
        out = predict(model, prep.batch, r, fixed_actions)
        if prep.kind == "node-regression":
            values.append(float(np.abs(out - prep.targets).mean()))
        else:
            values.append(float((out.argmax(axis=1) == prep.targets).mean()))
    return _summarise(values)


def evaluate_mae(model, samples, seeds: int = DEFAULT_EVAL_SEEDS) -> float:
    if _task(model) != "node-regression":
        raise ConfigError("MAE needs a regression model")
    return evaluate(model, samples, seeds).mean


def evaluate_accuracy(model, samples, seeds: int = DEFAULT_EVAL_SEEDS) -> float:
    if _task(model) != "graph-classification":
        raise ConfigError("accuracy needs a classification model")
    return evaluate(model, samples, seeds).mean


# -- training ------------------------------------------------------------------------------


def _loss(pred: Tensor, prep: Prepared, rows: np.ndarray | None = None) -> Tensor:
    targets = prep.targets if rows is None else prep.targets[rows]
    if prep.kind == "node-regression":
        return tabs(pred - targets).mean()
    logp = log_softmax(pred, axis=1)
    return -(logp[np.arange(len(targets)), targets].mean())


def train(config: RunConfig, dataset: dict[str, Sequence[Sample]]) -> tuple[CoGnnModel, MetricsLog]:
    """Adam training with model selection on the validation metric.

    ``dataset`` maps ``train``/``valid``/``test`` to sample lists. Returns the
    model holding the parameters of the best validation evaluation.
    """
    splits = {k: prepare(v) for k, v in dataset.items() if v}
    for name in ("train", "valid"):
        if name not in splits:
            raise ConfigError(f"dataset has no {name!r} split")
    tr = splits["train"]
    if tr.kind != config.kind:
        raise ConfigError(f"config task {config.task!r} does not match the dataset")
    model = CoGnnModel(config.model_config(tr.batch.graph.feature_dim), rngmod.stream(config.seed, "init"))
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    gumbel = rngmod.stream(config.seed, "gumbel")
    drop = rngmod.stream(config.seed, "dropout")
    shuffle = rngmod.stream(config.seed, "batch")
    regression = tr.kind == "node-regression"
    metrics = MetricsLog("mae" if regression else "accuracy")

    full_batch = config.batch_size is None or config.batch_size >= tr.size
    train_samples = list(dataset["train"])
    best_val, best_state = math.inf if regression else -math.inf, model.state_dict()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if full_batch:
            groups = [None]
        else:
            perm = shuffle.permutation(tr.size)
            groups = [perm[i : i + config.batch_size] for i in range(0, tr.size, config.batch_size)]
        losses, ratios = [], None
        for rows in groups:
            if rows is None:
                batch = tr.batch
            else:
                rows = np.sort(rows)
                batch = batch_graphs([train_samples[i].graph for i in rows])
            opt.zero_grad()
            out = model.forward(batch, gumbel, training=True, dropout_rng=drop)
            loss = _loss(out.prediction, tr, rows)
            lval = float(loss.data)
            if not math.isfinite(lval):
                raise DivergenceError(epoch, lval)
            if loss.requires_grad:
                backward(loss)
                opt.step()
            losses.append(lval)
            if ratios is None:
                ratios = [_kept_fraction(e) for e in out.edge_sets]
        val = test = math.nan
        if epoch % config.eval_every == 0 or epoch == config.epochs - 1:
            val = evaluate(model, splits["valid"], config.select_seeds).mean
            if "test" in splits:
                test = evaluate(model, splits["test"], config.select_seeds).mean
            better = val < best_val if regression else val > best_val
            if better:
                best_val, best_state, metrics.best_epoch = val, model.state_dict(), epoch
        metrics.append(epoch, float(np.mean(losses)), val, test, ratios or [], time.perf_counter() - t0)
        if val == val:
            log.debug("epoch %d loss %.4f val %.4f test %.4f", epoch, metrics.train_loss[-1], val, test)

    model.load_state_dict(best_state)
    for name, prep in splits.items():
        metrics.final[name] = evaluate(model, prep, config.eval_seeds)
    return model, metrics


# -- instrumentation -------------------------------------------------------------------------


def _kept_fraction(edges) -> float:
    gates = edges.gate_values()
    return float((gates == 1.0).mean()) if len(gates) else 0.0


def edge_retention_ratio(model: CoGnnModel, graph: Graph | GraphBatch, seeds: int = DEFAULT_EVAL_SEEDS,
                         fixed_actions=None) -> list[float]:
    """Per layer, fraction of the ``2|E|`` directed edges whose gate is open, averaged over seeds."""
    rngs = _eval_rngs(seeds if fixed_actions is None else 1)
    totals = np.zeros(model.config.env_layers)
    for r in rngs:
        with no_grad():
            out = model.forward(graph, r, fixed_actions=fixed_actions)
        totals += [_kept_fraction(e) for e in out.edge_sets]
    return list(totals / len(rngs))


def oracle_root_neighbors_actions(batch: GraphBatch) -> list[np.ndarray]:
    """Root listens, degree-6 root neighbours broadcast, everything else isolates."""
    g = batch.graph
    acts = np.full(g.num_nodes, ISOLATE, dtype=np.int64)
    deg = g.degrees()
    for r in batch.roots:
        nb = g.neighbors(r)
        acts[nb[deg[nb] == 6]] = BROADCAST
    acts[batch.roots] = LISTEN
    return [acts]


def action_edge_accuracy(model: CoGnnModel, samples, seeds: int = DEFAULT_EVAL_SEEDS,
                         fixed_actions=None) -> float:
    """Percent of neighbour->root edges kept exactly when the neighbour has degree 6."""
    if model.config.env_layers != 1:
        raise ConfigError("edge accuracy is defined for single-layer models")
    prep = _as_prepared(samples)
    g = prep.batch.graph
    is_root = np.zeros(g.num_nodes, dtype=bool)
    is_root[prep.batch.roots] = True
    into_root = is_root[g.dst]
    should_keep = g.degrees()[g.src[into_root]] == 6
    rngs = _eval_rngs(seeds if fixed_actions is None else 1)
    scores = []
    for r in rngs:
        with no_grad():
            out = model.forward(prep.batch, r, fixed_actions=fixed_actions)
        kept = out.edge_sets[0].gate_values()[into_root] == 1.0
        scores.append(float((kept == should_keep).mean()))
    return 100.0 * float(np.mean(scores))


def record_trace(model: CoGnnModel, graph: Graph, rng, out_path, fixed_actions=None) -> tuple[Path, Path]:
    """Write per-node actions to ``out_path`` and kept directed edges to ``<stem>.edges.csv``."""
    out_path = Path(out_path)
    edges_path = out_path.with_name(out_path.stem + ".edges.csv")
    with no_grad():
        out = model.forward(graph, rng, fixed_actions=fixed_actions)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "node", "action", "p_S", "p_L", "p_B", "p_I", "tau"])
        for layer, f in enumerate(out.actions):
            for v in range(f.num_nodes):
                w.writerow([layer, v, ACTION_NAMES[f.actions[v]], *(repr(float(p)) for p in f.probs[v]), repr(float(f.tau[v]))])
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "src", "dst"])
        for layer, e in enumerate(out.edge_sets):
            for u, v in e.kept_edges():
                w.writerow([layer, u, v])
    return out_path, edges_path


# -- cost accounting ---------------------------------------------------------------------------


def predicted_layer_cost(act_layers: int, act_dim: int, env_dim: int, num_nodes: int, num_edges: int) -> dict[str, int]:
    """Multiply-accumulate count of one cooperative layer: the action network term plus the environment term."""
    action = act_layers * act_dim * (num_edges * act_dim + num_nodes)
    env = env_dim * (num_edges * env_dim + num_nodes)
    return {"action": action, "environment": env, "total": action + env}


def time_layer(model: CoGnnModel, graph: Graph, repeats: int = 3, seed: int = 0) -> float:
    """Median wall-clock of one cooperative (or baseline) layer forward, in seconds."""
    h = Tensor(np.random.default_rng(seed).standard_normal((graph.num_nodes, model.config.env_dim)))
    r = rngmod.stream(seed, "gumbel")
    times = []
    with no_grad():
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.layer_forward(0, graph, h, r)
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def layer_cost_estimate(config: RunConfig, graph: Graph, repeats: int = 3) -> dict:
    cost = predicted_layer_cost(config.act_layers if config.family == "cognn" else 0, config.act_dim,
                                config.env_dim, graph.num_nodes, graph.num_edges)
    mc = dataclasses.replace(config.model_config(graph.feature_dim), env_layers=max(config.env_layers, 1))
    model = CoGnnModel(mc, rngmod.stream(config.seed, "init"))
    cost["seconds"] = time_layer(model, graph, repeats, config.seed)
    cost["num_nodes"] = graph.num_nodes
    cost["num_edges"] = graph.num_edges
    return cost


def random_graph(num_edges: int, rng: np.random.Generator, avg_degree: float = 4.0, dim: int = 1) -> Graph:
    """Random simple graph with exactly ``num_edges`` edges and about ``2|E|/avg_degree`` nodes."""
    n = max(3, int(round(2 * num_edges / avg_degree)))
    if num_edges > n * (n - 1) // 2:
        raise ConfigError(f"{num_edges} edges do not fit on {n} nodes")
    chosen = np.zeros((0, 2), dtype=np.int64)
    while len(chosen) < num_edges:
        need = num_edges - len(chosen)
        cand = rng.integers(0, n, size=(2 * need + 8, 2))
        cand = cand[cand[:, 0] != cand[:, 1]]
        cand = np.sort(cand, axis=1)
        chosen = np.unique(np.concatenate([chosen, cand]), axis=0)
        if len(chosen) > num_edges:
            chosen = chosen[rng.permutation(len(chosen))[:num_edges]]
    return Graph(n, chosen, np.ones((n, dim)))


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``y = a x + b``; returns ``(a, b, r2)``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def runtime_scaling(config: RunConfig, edge_counts: Sequence[int], repeats: int = 5) -> dict:
    """Time one layer on random graphs of the given sizes and fit wall-clock against |E|."""
    r = rngmod.stream(config.seed, "dataset")
    rows = []
    for m in edge_counts:
        g = random_graph(int(m), r)
        rows.append(layer_cost_estimate(config, g, repeats))
    a, b, r2 = linear_fit([row["num_edges"] for row in rows], [row["seconds"] for row in rows])
    return {"rows": rows, "slope": a, "intercept": b, "r2": r2}
