"""Cooperative GNN: per-node actions, straight-through Gumbel sampling, and the full model.

Every node picks one of four actions per layer, indexed ``S, L, B, I = 0..3``.
A node broadcasts under S/B and listens under S/L; the environment layer
then aggregates only over edges from a broadcaster into a listener.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParameterError, ParseError, SizeError, ValidationError
from .graph import (
    ACTION_NAMES,
    AGGREGATIONS,
    BROADCAST,
    ISOLATE,
    LISTEN,
    STANDARD,
    DirectedEdgeSet,
    Graph,
    GraphBatch,
    batch_graphs,
    induce_directed,
)
from .layers import GnnLayer, Mlp, pool
from .tensor import (
    Tensor,
    clamp_min,
    dropout,
    log_softmax,
    parameter,
    softmax,
    softplus,
    straight_through,
    take_rows,
)

__all__ = [
    "ACTION_NAMES",
    "STANDARD",
    "LISTEN",
    "BROADCAST",
    "ISOLATE",
    "ActionField",
    "TemperatureHead",
    "ModelConfig",
    "CoGnnModel",
    "ForwardResult",
    "action_logits",
    "learned_inverse_temperature",
    "gumbel_st_sample",
    "fixed_action_field",
    "cognn_layer_forward",
    "cognn_forward_with_fixed_actions",
    "cognn_model_forward",
    "save_checkpoint",
    "load_checkpoint",
]

TASKS = ("node-regression", "graph-classification")
FAMILIES = ("cognn", "baseline-sum", "baseline-mean", "baseline-gcn")
GUMBEL_EPS = 1e-12
MIN_INV_TEMPERATURE = 1e-6


@dataclass
class ActionField:
    """Sampled actions for one layer.

    ``probs`` are the action-network probabilities, ``y`` the straight-through
    vectors (exact one-hot forward values), ``actions`` the chosen indices and
    ``tau`` the per-node temperature used for the soft relaxation.
    """

    probs: np.ndarray
    y: Tensor
    actions: np.ndarray
    tau: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.actions)


@dataclass
class TemperatureHead:
    """Bias-free linear map to a per-node inverse temperature, offset by ``tau0``."""

    omega: Tensor
    tau0: float = 0.1

    def __post_init__(self):
        if self.tau0 < 0:
            raise ParameterError(f"tau0 must be non-negative, got {self.tau0}")


def learned_inverse_temperature(head: TemperatureHead, h_pi: Tensor) -> Tensor:
    """``1/tau = softplus(h . omega) + tau0``, floored at 1e-6."""
    if h_pi.ndim != 2 or h_pi.shape[1] != head.omega.shape[0]:
        raise SizeError(f"temperature head expects {head.omega.shape[0]} columns, got shape {h_pi.shape}")
    inv = softplus(h_pi @ head.omega) + head.tau0
    if np.any(inv.data < MIN_INV_TEMPERATURE):
        warnings.warn("inverse temperature below 1e-6 was floored", RuntimeWarning, stacklevel=2)
        inv = clamp_min(inv, MIN_INV_TEMPERATURE)
    return inv


def learned_temperature(head: TemperatureHead, h_pi: Tensor) -> Tensor:
    return 1.0 / learned_inverse_temperature(head, h_pi)


def gumbel_st_sample(logits: Tensor, inv_tau, rng, relaxed: bool = False) -> ActionField:
    """Straight-through Gumbel-softmax draw, one categorical sample per row.

    Forward: one-hot of ``argmax(log p + g)``. Backward: gradient of
    ``softmax((log p + g) / tau)``. ``rng`` only needs a ``random(shape)``
    method returning uniforms in [0, 1). With ``relaxed`` the soft vector is
    also used in the forward pass, which makes the whole map differentiable.
    """
    logp = log_softmax(logits, axis=1)
    u = np.clip(rng.random(logits.shape), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    g = -np.log(-np.log(u))
    inv = inv_tau if isinstance(inv_tau, Tensor) else Tensor(np.broadcast_to(np.asarray(inv_tau, float), (logits.shape[0],)))
    if inv.shape != (logits.shape[0],):
        raise SizeError(f"need one temperature per row, got shape {inv.shape}")
    if np.any(inv.data <= 0):
        raise ParameterError("temperature must be positive")
    soft = softmax((logp + g) * _column(inv), axis=1)
    scores = logp.data + g
    idx = scores.argmax(axis=1)
    hard = np.zeros_like(scores)
    hard[np.arange(len(idx)), idx] = 1.0
    y = soft if relaxed else straight_through(hard, soft)
    return ActionField(np.exp(logp.data), y, idx, 1.0 / inv.data)


def _column(t: Tensor) -> Tensor:
    return Tensor._result(t.data[:, None], (t,), lambda g: (g[:, 0],))


def fixed_action_field(actions: Sequence[int]) -> ActionField:
    a = np.asarray(actions, dtype=np.int64)
    if a.ndim != 1 or (len(a) and (a.min() < 0 or a.max() > 3)):
        raise ValidationError("actions must be a vector of indices in 0..3")
    hard = np.zeros((len(a), 4))
    hard[np.arange(len(a)), a] = 1.0
    return ActionField(hard.copy(), Tensor(hard), a, np.full(len(a), np.nan))


@dataclass
class ModelConfig:
    task: str = "node-regression"
    family: str = "cognn"
    in_dim: int = 5
    out_dim: int = 5
    env_layers: int = 1
    env_dim: int = 32
    env_agg: str = "mean"
    act_layers: int = 1
    act_dim: int = 16
    act_agg: str = "sum"
    activation: str = "relu"
    dropout: float = 0.0
    learn_temp: bool = True
    tau0: float = 0.1
    temp: float = 1.0
    pooling: str = "sum"
    decoder_layers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        for name in ("env_agg", "act_agg"):
            if getattr(self, name) not in AGGREGATIONS:
                raise ConfigError(f"{name} must be one of {AGGREGATIONS}")
        if self.env_layers < 0 or self.act_layers < 0:
            raise ConfigError("depths must be non-negative")
        if min(self.env_dim, self.act_dim, self.in_dim, self.out_dim, self.decoder_layers) < 1:
            raise ConfigError("dims must be at least 1")
        if not self.learn_temp and self.temp <= 0:
            raise ConfigError("fixed temperature must be positive")

    @property
    def env_aggregation(self) -> str:
        return {"baseline-sum": "sum", "baseline-mean": "mean", "baseline-gcn": "gcn"}.get(self.family, self.env_agg)

    @property
    def is_cooperative(self) -> bool:
        return self.family == "cognn"


@dataclass
class ForwardResult:
    prediction: Tensor
    node_states: Tensor
    actions: list[ActionField] = field(default_factory=list)
    edge_sets: list[DirectedEdgeSet] = field(default_factory=list)


class CoGnnModel:
    """Encoder, ``env_layers`` cooperative layers sharing one action network, task decoder.

    Baseline families skip the action network and run every environment
    layer on the full topology.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = c = config
        self.encoder = Mlp([c.in_dim, c.env_dim], rng, c.activation)
        self.env = [GnnLayer(c.env_dim, c.env_dim, rng, c.env_aggregation, c.activation) for _ in range(c.env_layers)]
        self.action: list[GnnLayer] = []
        self.action_head: Mlp | None = None
        self.temperature: TemperatureHead | None = None
        if c.is_cooperative:
            dims = [c.env_dim] + [c.act_dim] * c.act_layers
            self.action = [GnnLayer(a, b, rng, c.act_agg, c.activation) for a, b in zip(dims, dims[1:])]
            self.action_head = Mlp([dims[-1], 4], rng)
            if c.learn_temp:
                bound = math.sqrt(6.0 / (dims[-1] + 1))
                self.temperature = TemperatureHead(parameter(rng.uniform(-bound, bound, dims[-1])), c.tau0)
        hidden = [c.env_dim] * c.decoder_layers
        self.decoder = Mlp(hidden + [c.out_dim], rng, c.activation)

    # -- parameters ---------------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for n, p in self.encoder.named_parameters():
            yield f"encoder.{n}", p
        for i, layer in enumerate(self.action):
            for n, p in layer.named_parameters():
                yield f"action.{i}.{n}", p
        if self.action_head is not None:
            for n, p in self.action_head.named_parameters():
                yield f"action_head.{n}", p
        if self.temperature is not None:
            yield "temperature.omega", self.temperature.omega
        for i, layer in enumerate(self.env):
            for n, p in layer.named_parameters():
                yield f"env.{i}.{n}", p
        for n, p in self.decoder.named_parameters():
            yield f"decoder.{n}", p

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing, extra = sorted(set(own) - set(state)), sorted(set(state) - set(own))
            raise ValidationError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for n, p in own.items():
            if state[n].shape != p.shape:
                raise SizeError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=np.float64)

    # -- forward ------------------------------------------------------------------

    def action_hidden(self, graph: Graph, h: Tensor) -> Tensor:
        full = DirectedEdgeSet.full(graph)
        for layer in self.action:
            h = layer(h, full)
        return h

    def sample_actions(self, graph: Graph, h: Tensor, rng, relaxed: bool = False) -> ActionField:
        if not self.config.is_cooperative:
            raise ContractError("baseline models have no action network")
        if rng is None:
            raise ContractError("sampling actions needs a random generator")
        h_pi = self.action_hidden(graph, h)
        logits = self.action_head(h_pi)
        if self.temperature is not None:
            inv = learned_inverse_temperature(self.temperature, h_pi)
        else:
            inv = 1.0 / self.config.temp
        return gumbel_st_sample(logits, inv, rng, relaxed)

    def layer_forward(self, layer: int, graph: Graph, h: Tensor, rng=None,
                      fixed: Sequence[int] | None = None, relaxed: bool = False) -> tuple[Tensor, ActionField | None, DirectedEdgeSet]:
        if not self.config.is_cooperative:
            edges = DirectedEdgeSet.full(graph)
            return self.env[layer](h, edges), None, edges
        if fixed is not None:
            field_ = fixed_action_field(fixed)
            if field_.num_nodes != graph.num_nodes:
                raise SizeError(f"schedule has {field_.num_nodes} actions for {graph.num_nodes} nodes")
        else:
            field_ = self.sample_actions(graph, h, rng, relaxed)
        edges = induce_directed(graph, field_)
        return self.env[layer](h, edges), field_, edges

    def forward(self, batch: GraphBatch | Graph, rng=None, training: bool = False,
                fixed_actions: Sequence[Sequence[int]] | None = None,
                dropout_rng: np.random.Generator | None = None, relaxed: bool = False) -> ForwardResult:
        if isinstance(batch, Graph):
            batch = batch_graphs([batch])
        c = self.config
        g = batch.graph
        if g.feature_dim != c.in_dim:
            raise ConfigError(f"model expects {c.in_dim} input features, data has {g.feature_dim}")
        if fixed_actions is not None and len(fixed_actions) != c.env_layers:
            raise SizeError(f"schedule has {len(fixed_actions)} layers, model has {c.env_layers}")
        if training and c.dropout > 0 and dropout_rng is None:
            raise ContractError("dropout during training needs a generator")
        h = self.encoder(Tensor(g.features))
        fields: list[ActionField] = []
        edge_sets: list[DirectedEdgeSet] = []
        for layer in range(c.env_layers):
            h = dropout(h, c.dropout, dropout_rng, training)
            fixed = None if fixed_actions is None else fixed_actions[layer]
            h, field_, edges = self.layer_forward(layer, g, h, rng, fixed, relaxed)
            if field_ is not None:
                fields.append(field_)
            edge_sets.append(edges)
        if c.task == "node-regression":
            readout = take_rows(h, batch.roots)
        else:
            readout = pool(c.pooling, h, batch.graph_ids, batch.num_graphs)
        return ForwardResult(self.decoder(readout), h, fields, edge_sets)

    __call__ = forward


def action_logits(model: CoGnnModel, graph: Graph, h: Tensor) -> Tensor:
    """Action-network logits over ``[S, L, B, I]``, computed on the full topology."""
    if model.action_head is None:
        raise ContractError("baseline models have no action network")
    return model.action_head(model.action_hidden(graph, h))


def cognn_layer_forward(model: CoGnnModel, layer: int, graph: Graph, h: Tensor, rng) -> tuple[Tensor, ActionField]:
    h2, field_, _ = model.layer_forward(layer, graph, h, rng)
    return h2, field_


def cognn_forward_with_fixed_actions(model: CoGnnModel, graph: Graph | GraphBatch,
                                     schedule: Sequence[Sequence[int]]) -> ForwardResult:
    return model.forward(graph, fixed_actions=schedule)


def cognn_model_forward(model: CoGnnModel, graphs: Sequence[Graph] | GraphBatch, rng,
                        training: bool = False) -> ForwardResult:
    batch = graphs if isinstance(graphs, GraphBatch) else batch_graphs(list(graphs))
    return model.forward(batch, rng, training)


# -- checkpoints --------------------------------------------------------------------
#
# layout (little endian):
#   b"CGNN" | u8 version | u32 config length | config JSON | u32 record count |
#   records: u16 name length | name | u8 ndim | u64 dims... | f64 data

MAGIC = b"CGNN"
VERSION = 1


def save_checkpoint(model: CoGnnModel, path) -> None:
    buf = io.BytesIO()
    cfg = json.dumps(dataclasses.asdict(model.config), sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<BI", VERSION, len(cfg)))
    buf.write(cfg)
    params = list(model.named_parameters())
    buf.write(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}Q", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> CoGnnModel:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(path, 0, f"truncated checkpoint at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ParseError(path, 0, "not a model checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<BI", take(5))
    if version != VERSION:
        raise ParseError(path, 0, f"unsupported checkpoint version {version}")
    config = ModelConfig(**json.loads(take(cfg_len).decode("utf-8")))
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = math.prod(shape)
        state[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise ParseError(path, 0, "trailing bytes after last record")
    model = CoGnnModel(config, np.random.default_rng(0))
    model.load_state_dict(state)
    return model
