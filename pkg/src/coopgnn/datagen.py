"""Synthetic datasets (RootNeighbors, Cycles), 1-WL colour refinement and JSONL I/O."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import rng as rngmod
from .errors import ParseError, ValidationError
from .graph import Graph

SPLITS = ("train", "valid", "test")
FEATURE_DIM = 5
TARGET_DEGREE = 6

# inclusive integer ranges per split
LEVEL1_RANGE = {"train": (3, 10), "valid": (5, 12), "test": (5, 12)}
DEGREE6_RANGE = {"train": (1, 3), "valid": (3, 5), "test": (3, 5)}
OTHER_DEGREE_RANGE = (2, 3)

CYCLE_SPLITS = {"train": (6, 7), "valid": (8, 9), "test": (10, 12)}


@dataclass
class RootedTreeSample:
    graph: Graph
    target: np.ndarray
    split: str

    kind = "root_neighbors"


@dataclass
class CyclePairSample:
    graph: Graph
    label: int
    k: int
    split: str

    kind = "cycles"


Sample = Union[RootedTreeSample, CyclePairSample]


# -- RootNeighbors ------------------------------------------------------------------


def _tree(rng: np.random.Generator, split: str) -> RootedTreeSample:
    m = int(rng.integers(LEVEL1_RANGE[split][0], LEVEL1_RANGE[split][1] + 1))
    k6 = int(rng.integers(DEGREE6_RANGE[split][0], DEGREE6_RANGE[split][1] + 1))
    edges = [(0, i) for i in range(1, m + 1)]
    n = m + 1
    for i in range(1, m + 1):
        if i <= k6:
            children = TARGET_DEGREE - 1
        else:
            children = int(rng.integers(OTHER_DEGREE_RANGE[0], OTHER_DEGREE_RANGE[1] + 1)) - 1
        for _ in range(children):
            edges.append((i, n))
            n += 1
    x = rng.uniform(-2.0, 2.0, size=(n, FEATURE_DIM))
    g = Graph(n, edges, x)
    return RootedTreeSample(g, root_neighbors_target(g), split)


def generate_root_neighbors(seed: int, per_split: int = 1000) -> list[RootedTreeSample]:
    """Depth-2 trees rooted at node 0; ``per_split`` trees for each of train/valid/test.

    The first ``k6`` level-1 nodes get five leaf children (degree 6); every
    other level-1 node has degree 2 or 3.
    """
    rng = rngmod.stream(seed, "dataset")
    return [_tree(rng, split) for split in SPLITS for _ in range(per_split)]


def root_neighbors_target(g: Graph) -> np.ndarray:
    """Mean feature vector of root neighbours whose degree is exactly 6."""
    deg = g.degrees()
    nbrs = g.neighbors(0) if g.num_nodes else np.zeros(0, np.int64)
    chosen = nbrs[deg[nbrs] == TARGET_DEGREE]
    if len(chosen) == 0:
        raise ValidationError("root has no neighbour of degree 6")
    return g.features[chosen].mean(axis=0)


# -- Cycles ---------------------------------------------------------------------------


def cycle_edges(k: int, offset: int = 0) -> list[tuple[int, int]]:
    return [(offset + i, offset + (i + 1) % k) for i in range(k)]


def generate_cycles() -> list[CyclePairSample]:
    """For k = 6..12: a k-cycle (label 1) and a (k-3)-cycle plus a triangle (label 0)."""
    samples = []
    for split, (lo, hi) in CYCLE_SPLITS.items():
        for k in range(lo, hi + 1):
            ones = np.ones((k, 1))
            samples.append(CyclePairSample(Graph(k, cycle_edges(k), ones), 1, k, split))
            split_edges = cycle_edges(k - 3) + cycle_edges(3, offset=k - 3)
            samples.append(CyclePairSample(Graph(k, split_edges, ones), 0, k, split))
    return samples


# -- 1-WL ---------------------------------------------------------------------------------


def _digest(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:16]


def wl1_refine(g: Graph, max_rounds: int | None = None) -> list[str]:
    """Colour refinement from a uniform colouring until the partition stops splitting."""
    colors = ["0"] * g.num_nodes
    classes = 1 if g.num_nodes else 0
    rounds = g.num_nodes if max_rounds is None else max_rounds
    for _ in range(rounds):
        new = [
            _digest(colors[v] + "|" + ",".join(sorted(colors[u] for u in g.neighbors(v))))
            for v in range(g.num_nodes)
        ]
        new_classes = len(set(new))
        colors = new
        if new_classes == classes:
            break
        classes = new_classes
    return colors


def wl1_colors(g: Graph) -> Counter:
    """Histogram of stable 1-WL colours."""
    return Counter(wl1_refine(g))


def wl1_equivalent(a: Graph, b: Graph) -> bool:
    """Run refinement on the disjoint union and compare the two colour histograms."""
    n = a.num_nodes
    union = Graph(n + b.num_nodes, np.concatenate([a.edges, b.edges + n]) if a.num_edges + b.num_edges else [],
                  np.zeros((n + b.num_nodes, 1)))
    colors = wl1_refine(union)
    return Counter(colors[:n]) == Counter(colors[n:])


# -- serialisation -----------------------------------------------------------------------


def _record(s: Sample) -> dict:
    g = s.graph
    rec = {
        "kind": s.kind,
        "split": s.split,
        "num_nodes": g.num_nodes,
        "edges": g.edges.tolist(),
        "x": g.features.tolist(),
    }
    if isinstance(s, RootedTreeSample):
        rec["target"] = s.target.tolist()
    else:
        rec["label"] = s.label
        rec["k"] = s.k
    return rec


def dumps_sample(s: Sample) -> str:
    return json.dumps(_record(s), separators=(",", ":"))


def save_dataset(path, samples: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps_sample(s))
            fh.write("\n")


def _parse(rec: dict) -> Sample:
    g = Graph(rec["num_nodes"], rec["edges"], np.asarray(rec["x"], dtype=np.float64).reshape(rec["num_nodes"], -1))
    if rec["split"] not in SPLITS:
        raise ValueError(f"unknown split {rec['split']!r}")
    if rec["kind"] == "root_neighbors":
        return RootedTreeSample(g, np.asarray(rec["target"], dtype=np.float64), rec["split"])
    if rec["kind"] == "cycles":
        return CyclePairSample(g, int(rec["label"]), int(rec["k"]), rec["split"])
    raise ValueError(f"unknown sample kind {rec['kind']!r}")


def load_dataset(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(_parse(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, lineno, f"malformed record: {exc}") from None
    return samples


def root_neighbors_files(directory) -> dict[str, Path]:
    d = Path(directory)
    return {split: d / f"root_neighbors_{split}.jsonl" for split in SPLITS}


def write_root_neighbors(directory, samples: Sequence[RootedTreeSample]) -> dict[str, Path]:
    files = root_neighbors_files(directory)
    for split, path in files.items():
        save_dataset(path, [s for s in samples if s.split == split])
    return files


def write_cycles(directory, samples: Sequence[CyclePairSample]) -> Path:
    path = Path(directory) / "cycles.jsonl"
    save_dataset(path, samples)
    return path


def load_directory(directory) -> dict[str, list[Sample]]:
    """Load whichever dataset lives in ``directory``, grouped by split."""
    d = Path(directory)
    files = root_neighbors_files(d)
    if all(p.exists() for p in files.values()):
        return {split: load_dataset(p) for split, p in files.items()}
    cyc = d / "cycles.jsonl"
    if cyc.exists():
        samples = load_dataset(cyc)
        return {split: [s for s in samples if s.split == split] for split in SPLITS}
    raise FileNotFoundError(f"no dataset files found in {d}")
