import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopgnn.datagen import (
    CYCLE_SPLITS,
    DEGREE6_RANGE,
    LEVEL1_RANGE,
    generate_cycles,
    generate_root_neighbors,
    load_dataset,
    load_directory,
    root_neighbors_target,
    save_dataset,
    wl1_colors,
    wl1_equivalent,
    write_cycles,
    write_root_neighbors,
)
from coopgnn.errors import ParseError, ValidationError
from coopgnn.graph import Graph

from helpers import random_edges


@pytest.fixture(scope="module")
def trees():
    return generate_root_neighbors(0)


def tree_stats(g):
    deg = g.degrees()
    level1 = g.neighbors(0)
    return len(level1), int(np.sum(deg[level1] == 6)), deg[level1]


class TestRootNeighbors:
    def test_split_sizes(self, trees):
        for split in ("train", "valid", "test"):
            assert sum(s.split == split for s in trees) == 1000

    @pytest.mark.parametrize("split", ["train", "valid", "test"])
    def test_split_statistics(self, trees, split):
        level1, deg6 = set(), set()
        for s in trees:
            if s.split != split:
                continue
            m, k, degs = tree_stats(s.graph)
            level1.add(m)
            deg6.add(k)
            assert set(degs) <= {2, 3, 6}
        assert level1 == set(range(LEVEL1_RANGE[split][0], LEVEL1_RANGE[split][1] + 1))
        assert deg6 == set(range(DEGREE6_RANGE[split][0], DEGREE6_RANGE[split][1] + 1))

    def test_depth_two_rooted_at_zero(self, trees):
        g = trees[0].graph
        level1 = set(g.neighbors(0).tolist())
        for v in range(1, g.num_nodes):
            if v in level1:
                continue
            parents = g.neighbors(v)
            assert len(parents) == 1 and parents[0] in level1

    def test_features_uniform_range(self, trees):
        x = np.concatenate([s.graph.features for s in trees[:200]])
        assert x.shape[1] == 5
        assert x.min() >= -2.0 and x.max() <= 2.0
        assert abs(x.mean()) < 0.05

    def test_target_is_brute_force_mean(self, trees):
        for s in trees[:50]:
            g = s.graph
            chosen = [v for v in g.neighbors(0) if len(g.neighbors(v)) == 6]
            np.testing.assert_allclose(s.target, np.mean(g.features[chosen], axis=0), rtol=1e-15)

    def test_target_requires_degree_six(self):
        g = Graph(3, [(0, 1), (0, 2)], np.zeros((3, 5)))
        with pytest.raises(ValidationError):
            root_neighbors_target(g)

    def test_deterministic(self):
        a = generate_root_neighbors(4, per_split=20)
        b = generate_root_neighbors(4, per_split=20)
        c = generate_root_neighbors(5, per_split=20)
        assert all(x.graph == y.graph for x, y in zip(a, b))
        assert any(x.graph != y.graph for x, y in zip(a, c))


class TestCycles:
    def test_pairs(self):
        samples = generate_cycles()
        assert len(samples) == 14
        for split, (lo, hi) in CYCLE_SPLITS.items():
            ks = sorted(s.k for s in samples if s.split == split)
            assert ks == sorted(2 * list(range(lo, hi + 1)))
        for s in samples:
            assert np.all(s.graph.degrees() == 2)
            assert s.graph.num_edges == s.k
            np.testing.assert_array_equal(s.graph.features, np.ones((s.k, 1)))

    def test_connectivity_matches_label(self):
        for s in generate_cycles():
            seen, stack = {0}, [0]
            while stack:
                for u in s.graph.neighbors(stack.pop()):
                    if int(u) not in seen:
                        seen.add(int(u))
                        stack.append(int(u))
            assert (len(seen) == s.k) == (s.label == 1)

    def test_pairs_are_wl_equivalent(self):
        samples = generate_cycles()
        for k in range(6, 13):
            pos, neg = [s.graph for s in samples if s.k == k]
            assert wl1_equivalent(pos, neg)


class TestWl:
    def test_distinguishes_path_from_star(self):
        path = Graph(4, [(0, 1), (1, 2), (2, 3)], np.zeros((4, 1)))
        star = Graph(4, [(0, 1), (0, 2), (0, 3)], np.zeros((4, 1)))
        assert not wl1_equivalent(path, star)

    def test_regular_graphs_collapse(self):
        hexagon = Graph(6, [(i, (i + 1) % 6) for i in range(6)], np.zeros((6, 1)))
        assert len(wl1_colors(hexagon)) == 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_sound_under_relabelling(self, n, seed):
        r = np.random.default_rng(seed)
        edges = random_edges(r, n)
        perm = r.permutation(n)
        a = Graph(n, edges, np.zeros((n, 1)))
        b = Graph(n, [(perm[u], perm[v]) for u, v in edges], np.zeros((n, 1)))
        assert wl1_colors(a) == wl1_colors(b)
        assert wl1_equivalent(a, b)


class TestSerialisation:
    def test_round_trip(self, trees, tmp_path):
        path = tmp_path / "all.jsonl"
        save_dataset(path, trees)
        back = load_dataset(path)
        assert len(back) == len(trees)
        for a, b in zip(trees, back):
            assert a.graph == b.graph and a.split == b.split
            np.testing.assert_array_equal(a.target, b.target)

    def test_cycles_round_trip(self, tmp_path):
        samples = generate_cycles()
        write_cycles(tmp_path, samples)
        data = load_directory(tmp_path)
        flat = data["train"] + data["valid"] + data["test"]
        assert [(s.k, s.label) for s in flat] == [(s.k, s.label) for s in samples]

    def test_directory_layout(self, tmp_path):
        files = write_root_neighbors(tmp_path, generate_root_neighbors(1, per_split=5))
        assert sorted(p.name for p in files.values()) == [
            "root_neighbors_test.jsonl", "root_neighbors_train.jsonl", "root_neighbors_valid.jsonl"]
        assert {k: len(v) for k, v in load_directory(tmp_path).items()} == {"train": 5, "valid": 5, "test": 5}

    def test_checksum_stable(self, tmp_path):
        digests = []
        for i in range(2):
            write_root_neighbors(tmp_path, generate_root_neighbors(9, per_split=30))
            digests.append(hashlib.sha256((tmp_path / "root_neighbors_test.jsonl").read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_truncated_line_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(path, generate_root_neighbors(2, per_split=2))
        lines = path.read_text().splitlines()
        lines[3] = lines[3][: len(lines[3]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_dataset(path)
        assert info.value.line == 4
        assert ":4:" in str(info.value)

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"kind":"x","split":"train","num_nodes":1,"edges":[],"x":[[1]]}\n')
        with pytest.raises(ParseError):
            load_dataset(path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_directory(tmp_path)
