"""Basic message-passing layers, MLPs and graph pooling."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import ParameterError, SizeError
from .graph import AGGREGATIONS, DirectedEdgeSet, gated_aggregate
from .tensor import ACTIVATIONS, Tensor, activation, glorot_uniform_init, parameter, safe_row_div, scatter_rows


class GnnLayer:
    """``sigma(H W_s + agg(H) W_n + b)``, the basic Sum/Mean/GCN layer."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, aggregation: str = "sum",
                 activation: str = "relu", bias: bool = True):
        if aggregation not in AGGREGATIONS:
            raise ParameterError(f"unknown aggregation {aggregation!r}")
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.aggregation = aggregation
        self.activation = activation
        self.W_s = glorot_uniform_init(d_in, d_out, rng)
        self.W_n = glorot_uniform_init(d_in, d_out, rng)
        self.b = parameter(np.zeros(d_out)) if bias else None

    @property
    def dims(self) -> tuple[int, int]:
        return self.W_s.shape

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "W_s", self.W_s
        yield "W_n", self.W_n
        if self.b is not None:
            yield "b", self.b

    def __call__(self, h: Tensor, edges: DirectedEdgeSet) -> Tensor:
        return gnn_layer_forward(self, h, edges)


def gnn_layer_forward(params: GnnLayer, h: Tensor, edges: DirectedEdgeSet) -> Tensor:
    if h.ndim != 2 or h.shape[1] != params.W_s.shape[0]:
        raise SizeError(f"layer expects {params.W_s.shape[0]} input columns, got shape {h.shape}")
    if params.W_s.shape != params.W_n.shape:
        raise SizeError(f"W_s {params.W_s.shape} and W_n {params.W_n.shape} differ")
    z = h @ params.W_s + gated_aggregate(params.aggregation, edges, h) @ params.W_n
    if params.b is not None:
        z = z + params.b
    return activation(params.activation, z)


class Mlp:
    """Affine layers with an activation between them; the last layer is linear."""

    def __init__(self, dims: list[int], rng: np.random.Generator, activation: str = "relu"):
        if len(dims) < 2:
            raise ParameterError(f"an MLP needs at least input and output dims, got {dims}")
        self.activation = activation
        self.layers = [(glorot_uniform_init(a, b, rng), parameter(np.zeros(b))) for a, b in zip(dims, dims[1:])]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(self.layers):
            yield f"{i}.weight", w
            yield f"{i}.bias", b

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self, x)


def mlp_forward(params: Mlp, x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise SizeError(f"MLP expects {params.in_dim} input columns, got shape {x.shape}")
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        x = x @ w + b
        if i < last:
            x = activation(params.activation, x)
    return x


def pool(mode: str, h: Tensor, graph_ids: np.ndarray, num_graphs: int | None = None) -> Tensor:
    """Reduce node rows into one row per graph. ``graph_ids`` must be sorted."""
    ids = np.asarray(graph_ids, dtype=np.int64)
    if len(ids) != h.shape[0]:
        raise SizeError(f"{len(ids)} graph ids for {h.shape[0]} rows")
    if len(ids) and np.any(np.diff(ids) < 0):
        raise SizeError("graph ids must be sorted")
    n = int(ids[-1]) + 1 if num_graphs is None else num_graphs
    total = scatter_rows(h, ids, n)
    if mode == "sum":
        return total
    if mode == "mean":
        return safe_row_div(total, Tensor(np.bincount(ids, minlength=n).astype(np.float64)))
    raise ParameterError(f"unknown pooling {mode!r}")
