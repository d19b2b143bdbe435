"""Undirected attributed graphs, action-induced directed edge sets, and gated aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import SizeError, ValidationError
from .tensor import Tensor, mul, safe_row_div, scatter_rows, take_rows

# action indices
STANDARD, LISTEN, BROADCAST, ISOLATE = 0, 1, 2, 3
ACTION_NAMES = ("S", "L", "B", "I")

AGGREGATIONS = ("sum", "mean", "gcn")


class Graph:
    """A simple undirected graph with a node feature matrix.

    Edges are stored once as ``(u, v)`` with ``u < v``, sorted. Incoming
    adjacency is kept in CSR form: the directed edges ``u -> v`` for a fixed
    ``v`` occupy ``indptr[v]:indptr[v+1]`` with sources ascending. That order
    is the canonical aggregation order everywhere in the package.
    """

    __slots__ = ("num_nodes", "edges", "features", "indptr", "src", "dst", "_degrees")

    def __init__(self, num_nodes: int, edges, features):
        n = int(num_nodes)
        if n < 0:
            raise ValidationError(f"num_nodes must be non-negative, got {n}")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        if x.ndim != 2 or x.shape[0] != n:
            raise ValidationError(f"features have {x.shape[0] if x.ndim else 0} rows, expected {n}")
        if len(e):
            if e.min() < 0 or e.max() >= n:
                bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
                raise ValidationError(f"edge {tuple(int(t) for t in bad)} has an endpoint outside [0, {n})")
            if (e[:, 0] == e[:, 1]).any():
                bad = e[e[:, 0] == e[:, 1]][0]
                raise ValidationError(f"self-loop at node {int(bad[0])}")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
        self.num_nodes = n
        self.edges = e
        self.features = x
        both_src = np.concatenate([e[:, 0], e[:, 1]])
        both_dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((both_src, both_dst))
        self.src = np.ascontiguousarray(both_src[order])
        self.dst = np.ascontiguousarray(both_dst[order])
        counts = np.bincount(self.dst, minlength=n)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        self._degrees = counts.astype(np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return self._degrees.copy()

    def neighbors(self, v: int) -> np.ndarray:
        return self.src[self.indptr[v] : self.indptr[v + 1]]

    def with_features(self, features) -> "Graph":
        g = object.__new__(Graph)
        for name in ("num_nodes", "edges", "indptr", "src", "dst", "_degrees"):
            setattr(g, name, getattr(self, name))
        x = np.asarray(features, dtype=np.float64)
        if x.shape[0] != self.num_nodes:
            raise ValidationError(f"features have {x.shape[0]} rows, expected {self.num_nodes}")
        g.features = x
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self) -> str:
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, dim={self.feature_dim})"


def graph_new(num_nodes: int, edges, features) -> Graph:
    return Graph(num_nodes, edges, features)


def degrees(g: Graph) -> np.ndarray:
    return g.degrees()


@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of several graphs with bookkeeping to split it again."""

    graph: Graph
    graph_ids: np.ndarray  # per node
    offsets: np.ndarray  # first node index of each graph, plus total

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1

    @property
    def roots(self) -> np.ndarray:
        return self.offsets[:-1]


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    edges = [g.edges + off for g, off in zip(graphs, offsets[:-1]) if g.num_edges]
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
    feats = np.concatenate([g.features for g in graphs]) if graphs else np.zeros((0, 0))
    ids = np.repeat(np.arange(len(graphs)), sizes)
    return GraphBatch(Graph(int(offsets[-1]), edges, feats), ids, offsets)


@dataclass(frozen=True)
class DirectedEdgeSet:
    """Per-directed-edge gate weights over a graph, in the graph's CSR order.

    ``weights is None`` stands for the full topology (every gate 1).
    """

    graph: Graph
    weights: Tensor | None = None

    @classmethod
    def full(cls, graph: Graph) -> "DirectedEdgeSet":
        return cls(graph, None)

    def gate_values(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.graph.src))
        return self.weights.data

    def gate(self, u: int, v: int) -> float:
        """Forward value of the gate on ``u -> v``."""
        g = self.graph
        lo, hi = g.indptr[v], g.indptr[v + 1]
        pos = lo + np.searchsorted(g.src[lo:hi], u)
        if pos >= hi or g.src[pos] != u:
            raise ValidationError(f"{u}->{v} is not an edge")
        return float(self.gate_values()[pos])

    def kept_edges(self) -> list[tuple[int, int]]:
        keep = self.gate_values() == 1.0
        return [(int(u), int(v)) for u, v in zip(self.graph.src[keep], self.graph.dst[keep])]

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.graph.dst, weights=self.gate_values(), minlength=self.graph.num_nodes)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.graph.src, weights=self.gate_values(), minlength=self.graph.num_nodes)


def induce_directed(g: Graph, actions) -> DirectedEdgeSet:
    """Gate law ``w(u->v) = (y_u[S] + y_u[B]) * (y_v[S] + y_v[L])``.

    ``actions`` is an ``ActionField`` or an ``(n, 4)`` tensor of
    straight-through action vectors.
    """
    y = getattr(actions, "y", actions)
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.shape != (g.num_nodes, 4):
        raise ValidationError(f"need one 4-vector per node ({g.num_nodes}), got shape {y.shape}")
    broadcasts = y[:, STANDARD] + y[:, BROADCAST]
    listens = y[:, STANDARD] + y[:, LISTEN]
    w = mul(take_rows(broadcasts, g.src), take_rows(listens, g.dst))
    return DirectedEdgeSet(g, w)


def gather_sum(g: Graph, w, h: Tensor) -> Tensor:
    """``out[v] = sum_{u->v} w(u->v) * h[u]`` in canonical order.

    ``w`` is a tensor over directed edges, a constant array, or None for all ones.
    """
    if h.ndim != 2 or h.shape[0] != g.num_nodes:
        raise SizeError(f"node state has shape {h.shape}, graph has {g.num_nodes} nodes")
    wt = w if isinstance(w, Tensor) else None
    wv = np.ones(len(g.src)) if w is None else np.ascontiguousarray(wt.data if wt is not None else w, dtype=np.float64)
    if wv.shape != g.src.shape:
        raise SizeError(f"gate vector has length {len(wv)}, graph has {len(g.src)} directed edges")
    hv = np.ascontiguousarray(h.data)
    out = kernels.gather_sum(g.indptr, g.src, wv, hv)
    parents = (h, wt) if wt is not None else (h,)

    def back(grad):
        need_w = wt is not None and wt.requires_grad
        dh, dw = kernels.gather_sum_backward(g.indptr, g.src, wv, hv, np.ascontiguousarray(grad), need_w)
        return (dh, dw if need_w else None) if wt is not None else (dh,)

    return Tensor._result(out, parents, back)


def gated_aggregate(mode: str, d: DirectedEdgeSet, h: Tensor) -> Tensor:
    """Aggregate neighbor states over the kept directed edges.

    ``sum``: weighted sum. ``mean``: weighted sum over total incoming gate
    weight; an empty neighborhood gives the zero vector. ``gcn``: each term
    scaled by ``1/sqrt((din(v)+1)(dout(u)+1))`` with degrees taken from the
    forward gate values.
    """
    g = d.graph
    if mode == "sum":
        return gather_sum(g, d.weights, h)
    if mode == "mean":
        total = gather_sum(g, d.weights, h)
        if d.weights is None:
            count = Tensor(g._degrees.astype(np.float64))
        else:
            count = scatter_rows(d.weights, g.dst, g.num_nodes)
        return safe_row_div(total, count)
    if mode == "gcn":
        din, dout = d.in_degrees(), d.out_degrees()
        norm = 1.0 / np.sqrt((din[g.dst] + 1.0) * (dout[g.src] + 1.0))
        w = norm if d.weights is None else mul(d.weights, norm)
        return gather_sum(g, w, h)
    raise ValidationError(f"unknown aggregation {mode!r}; expected one of {AGGREGATIONS}")
