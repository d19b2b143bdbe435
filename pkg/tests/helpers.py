"""Independent oracles shared by the test modules."""

import numpy as np


def finite_difference(f, arrays, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def brute_neighbor_sum(num_nodes, edges, h):
    """Sum of neighbour rows, accumulated in ascending neighbour order."""
    nbrs = [[] for _ in range(num_nodes)]
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    out = np.zeros_like(h)
    for v in range(num_nodes):
        for u in sorted(set(nbrs[v])):
            out[v] = out[v] + h[u]
    return out


def random_edges(rng, n, p=0.4):
    return [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
