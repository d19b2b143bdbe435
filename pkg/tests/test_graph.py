import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopgnn import kernels
from coopgnn.datagen import generate_root_neighbors
from coopgnn.errors import SizeError, ValidationError
from coopgnn.graph import (
    BROADCAST,
    ISOLATE,
    LISTEN,
    STANDARD,
    DirectedEdgeSet,
    Graph,
    batch_graphs,
    degrees,
    gated_aggregate,
    gather_sum,
    graph_new,
    induce_directed,
)
from coopgnn.tensor import Tensor, backward, no_grad, parameter

from helpers import brute_neighbor_sum, finite_difference, random_edges, rel_err


def onehot(actions):
    y = np.zeros((len(actions), 4))
    y[np.arange(len(actions)), actions] = 1.0
    return Tensor(y)


# Three-layer schedule on a 9-node graph: s r u v w, then w's
# two neighbours and the two nodes closing the 4-cycle behind them.
S_, R_, U_, V_, W_, WT, WB, RT, RB = range(9)
SCHED_EDGES = [(S_, R_), (S_, U_), (R_, U_), (U_, V_), (V_, W_), (W_, WT), (W_, WB), (WT, RT), (WB, RB), (RT, RB)]
SCHED_ACTIONS = {
    U_: (LISTEN, LISTEN, STANDARD),
    V_: (STANDARD, STANDARD, LISTEN),
    W_: (STANDARD, STANDARD, LISTEN),
    S_: (STANDARD, ISOLATE, STANDARD),
    R_: (STANDARD, ISOLATE, STANDARD),
}


def scheduled_actions(layer):
    return [SCHED_ACTIONS.get(v, (STANDARD,) * 3)[layer] for v in range(9)]


def both(*pairs):
    return {e for u, v in pairs for e in ((u, v), (v, u))}


SCHED_EXPECTED = [
    both((S_, R_), (V_, W_), (W_, WT), (W_, WB), (WT, RT), (WB, RB), (RT, RB)) | {(S_, U_), (R_, U_), (V_, U_)},
    both((V_, W_), (W_, WT), (W_, WB), (WT, RT), (WB, RB), (RT, RB)) | {(V_, U_)},
    both((S_, R_), (S_, U_), (R_, U_), (WT, RT), (WB, RB), (RT, RB)) | {(U_, V_), (WT, W_), (WB, W_)},
]


class TestGraphNew:
    def test_triangle_degrees(self):
        g = graph_new(3, [(0, 1), (1, 2), (0, 2)], np.zeros((3, 1)))
        np.testing.assert_array_equal(degrees(g), [2, 2, 2])

    def test_duplicate_stored_once(self):
        g = Graph(2, [(0, 1), (1, 0)], np.zeros((2, 1)))
        assert g.num_edges == 1
        np.testing.assert_array_equal(g.edges, [[0, 1]])

    def test_out_of_range(self):
        with pytest.raises(ValidationError, match="outside"):
            Graph(3, [(0, 5)], np.zeros((3, 1)))

    def test_self_loop(self):
        with pytest.raises(ValidationError, match="self-loop"):
            Graph(3, [(1, 1)], np.zeros((3, 1)))

    def test_feature_rows(self):
        with pytest.raises(ValidationError):
            Graph(3, [(0, 1)], np.zeros((2, 1)))

    def test_neighbor_lists_sorted(self):
        g = Graph(5, [(4, 0), (2, 0), (0, 3), (1, 0)], np.zeros((5, 1)))
        np.testing.assert_array_equal(g.neighbors(0), [1, 2, 3, 4])
        for v in range(5):
            assert np.all(np.diff(g.neighbors(v)) > 0)


class TestDegrees:
    def test_star(self):
        g = Graph(7, [(0, i) for i in range(1, 7)], np.zeros((7, 1)))
        assert degrees(g)[0] == 6

    def test_cycle(self):
        g = Graph(6, [(i, (i + 1) % 6) for i in range(6)], np.zeros((6, 1)))
        np.testing.assert_array_equal(degrees(g), [2] * 6)

    def test_root_neighbors_root(self):
        tree = generate_root_neighbors(3, per_split=1)[0].graph
        level1 = tree.neighbors(0)
        assert degrees(tree)[0] == len(level1)
        assert np.all(tree.neighbors(0) == np.arange(1, len(level1) + 1))


class TestInduceDirected:
    def test_all_standard_keeps_everything(self):
        g = Graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)], np.zeros((4, 1)))
        d = induce_directed(g, onehot([STANDARD] * 4))
        assert set(d.kept_edges()) == both(*map(tuple, g.edges))
        assert np.all(d.gate_values() == 1.0)

    def test_all_isolate_empty(self):
        g = Graph(4, [(0, 1), (1, 2), (2, 3)], np.zeros((4, 1)))
        d = induce_directed(g, onehot([ISOLATE] * 4))
        assert d.kept_edges() == []
        assert np.all(d.gate_values() == 0.0)

    def test_listen_and_standard(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        d = induce_directed(g, onehot([LISTEN, STANDARD]))
        assert d.gate(1, 0) == 1.0 and d.gate(0, 1) == 0.0

    @pytest.mark.parametrize("layer", [0, 1, 2])
    def test_three_layer_schedule(self, layer):
        g = Graph(9, SCHED_EDGES, np.zeros((9, 1)))
        d = induce_directed(g, onehot(scheduled_actions(layer)))
        assert set(d.kept_edges()) == SCHED_EXPECTED[layer]

    def test_gate_law_table(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        for a in range(4):
            for b in range(4):
                d = induce_directed(g, onehot([a, b]))
                expected = float(a in (STANDARD, BROADCAST) and b in (STANDARD, LISTEN))
                assert d.gate(0, 1) == expected

    def test_locality(self):
        # changing the action of a node outside {u, v} never changes w(u->v)
        g = Graph(4, [(0, 1), (1, 2), (2, 3)], np.zeros((4, 1)))
        base = induce_directed(g, onehot([STANDARD, STANDARD, BROADCAST, LISTEN])).gate(0, 1)
        for a in range(4):
            assert induce_directed(g, onehot([STANDARD, STANDARD, a, a])).gate(0, 1) == base

    def test_count_mismatch(self):
        g = Graph(3, [(0, 1)], np.zeros((3, 1)))
        with pytest.raises(ValidationError):
            induce_directed(g, onehot([STANDARD] * 2))


class TestGatedAggregate:
    @pytest.mark.parametrize("mode", ["sum", "mean", "gcn"])
    def test_closed_gates_zero(self, mode):
        g = Graph(4, [(0, 1), (1, 2), (2, 3)], np.zeros((4, 1)))
        h = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
        out = gated_aggregate(mode, induce_directed(g, onehot([ISOLATE] * 4)), h)
        assert not out.data.any()

    def test_path_sum(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        out = gated_aggregate("sum", induce_directed(g, onehot([STANDARD] * 2)), Tensor([[1.0], [3.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [1.0]])

    def test_mean_two_in_edges(self):
        g = Graph(4, [(0, 1), (0, 2), (0, 3)], np.zeros((4, 1)))
        acts = [LISTEN, BROADCAST, BROADCAST, ISOLATE]
        out = gated_aggregate("mean", induce_directed(g, onehot(acts)), Tensor([[0.0], [2.0], [4.0], [100.0]]))
        assert out.data[0, 0] == 3.0
        assert not out.data[1:].any()

    def test_gcn_full_topology(self):
        g = Graph(3, [(0, 1), (1, 2)], np.zeros((3, 1)))
        h = np.array([[1.0], [2.0], [4.0]])
        out = gated_aggregate("gcn", DirectedEdgeSet.full(g), Tensor(h)).data
        deg = np.array([1, 2, 1]) + 1.0
        expected = [h[1] / np.sqrt(deg[0] * deg[1]),
                    h[0] / np.sqrt(deg[1] * deg[0]) + h[2] / np.sqrt(deg[1] * deg[2]),
                    h[1] / np.sqrt(deg[2] * deg[1])]
        np.testing.assert_allclose(out, expected, rtol=1e-15)

    def test_size_mismatch(self):
        g = Graph(3, [(0, 1)], np.zeros((3, 1)))
        with pytest.raises(SizeError):
            gated_aggregate("sum", DirectedEdgeSet.full(g), Tensor(np.zeros((2, 2))))

    def test_unknown_mode(self):
        g = Graph(2, [(0, 1)], np.zeros((2, 1)))
        with pytest.raises(ValidationError):
            gated_aggregate("max", DirectedEdgeSet.full(g), Tensor(np.zeros((2, 2))))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31 - 1))
    def test_recovery_all_standard(self, n, seed):
        r = np.random.default_rng(seed)
        edges = random_edges(r, n)
        g = Graph(n, edges, np.zeros((n, 1)))
        h = r.standard_normal((n, 3))
        out = gated_aggregate("sum", induce_directed(g, onehot([STANDARD] * n)), Tensor(h)).data
        np.testing.assert_array_equal(out, brute_neighbor_sum(n, edges, h))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2**31 - 1), st.sampled_from(["sum", "mean", "gcn"]))
    def test_permutation_equivariance(self, n, seed, mode):
        r = np.random.default_rng(seed)
        edges = random_edges(r, n, 0.5)
        h = r.standard_normal((n, 2))
        acts = r.integers(0, 4, n)
        perm = r.permutation(n)  # new label of node v is perm[v]
        g = Graph(n, edges, np.zeros((n, 1)))
        gp = Graph(n, [(perm[u], perm[v]) for u, v in edges], np.zeros((n, 1)))
        hp = np.empty_like(h)
        hp[perm] = h
        ap = np.empty_like(acts)
        ap[perm] = acts
        out = gated_aggregate(mode, induce_directed(g, onehot(acts)), Tensor(h)).data
        outp = gated_aggregate(mode, induce_directed(gp, onehot(ap)), Tensor(hp)).data
        np.testing.assert_allclose(outp[perm], out, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("mode", ["sum", "mean", "gcn"])
    def test_gradients_through_soft_gates(self, mode):
        r = np.random.default_rng(7)
        g = Graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)], np.zeros((6, 1)))
        h = r.standard_normal((6, 3))
        y = r.uniform(0.1, 1.0, (6, 4))
        wout = r.standard_normal((6, 3))
        th, ty = parameter(h), parameter(y)
        backward((gated_aggregate(mode, induce_directed(g, ty), th) * wout).sum())

        def f():
            with no_grad():
                d = induce_directed(g, Tensor(y))
                return float((gated_aggregate(mode, d, Tensor(h)).data * wout).sum())

        if mode == "gcn":
            # freeze the normaliser at the base point for the oracle
            base = induce_directed(g, Tensor(y))
            din, dout = base.in_degrees(), base.out_degrees()
            norm = 1.0 / np.sqrt((din[g.dst] + 1) * (dout[g.src] + 1))

            def f():
                with no_grad():
                    w = induce_directed(g, Tensor(y)).weights.data * norm
                    return float((gather_sum(g, w, Tensor(h)).data * wout).sum())

        nh, ny = finite_difference(f, [h, y])
        assert rel_err(th.grad, nh) < 1e-6
        assert rel_err(ty.grad, ny) < 1e-6


class TestBatch:
    def test_offsets_and_edges(self):
        a = Graph(2, [(0, 1)], np.ones((2, 1)))
        b = Graph(3, [(0, 2)], 2 * np.ones((3, 1)))
        bt = batch_graphs([a, b])
        assert bt.graph.num_nodes == 5
        np.testing.assert_array_equal(bt.offsets, [0, 2, 5])
        np.testing.assert_array_equal(bt.graph.edges, [[0, 1], [2, 4]])
        np.testing.assert_array_equal(bt.graph_ids, [0, 0, 1, 1, 1])


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
class TestKernelBackends:
    def test_forward_and_backward_agree(self):
        r = np.random.default_rng(11)
        g = Graph(40, random_edges(r, 40, 0.2), np.zeros((40, 1)))
        w = r.standard_normal(len(g.src))
        h = r.standard_normal((40, 5))
        gout = r.standard_normal((40, 5))
        ref = kernels.BACKENDS["python"]
        fast = kernels.BACKENDS["compiled"]
        np.testing.assert_allclose(fast.gather_sum(g.indptr, g.src, w, h), ref.gather_sum(g.indptr, g.src, w, h),
                                   rtol=1e-13, atol=1e-13)
        dh1, dw1 = fast.gather_sum_backward(g.indptr, g.src, w, h, gout, True)
        dh2, dw2 = ref.gather_sum_backward(g.indptr, g.src, w, h, gout, True)
        np.testing.assert_allclose(dh1, dh2, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(dw1, dw2, rtol=1e-12, atol=1e-12)

    def test_switching(self):
        before = kernels.backend_name()
        try:
            kernels.set_backend("python")
            assert kernels.backend_name() == "python"
        finally:
            kernels.set_backend(before)
        with pytest.raises(ValueError):
            kernels.set_backend("gpu")

    def test_benchmark_rows(self):
        from coopgnn.bench import compare_backends

        (row,) = compare_backends([300], dim=4, repeats=1)
        assert row["num_edges"] == 300
        assert row["max_abs_diff"] <= 1e-12
        assert row["compiled_forward"] > 0 and row["python_backward"] > 0
