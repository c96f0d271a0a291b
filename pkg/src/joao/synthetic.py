"""Small synthetic graph datasets for demos and end-to-end checks."""

from __future__ import annotations

import numpy as np

from .graph import Dataset, Graph
from .rng import substream


def cycle_graph(n: int, label: int | None = None) -> Graph:
    edges = [(k, (k + 1) % n) for k in range(n)]
    return Graph.from_edges(n, edges, np.ones((n, 1)), label)


def star_graph(n: int, label: int | None = None) -> Graph:
    """One hub (node 0) joined to ``n - 1`` leaves."""
    return Graph.from_edges(n, [(0, k) for k in range(1, n)], np.ones((n, 1)), label)


def path_graph(n: int, label: int | None = None) -> Graph:
    return Graph.from_edges(n, [(k, k + 1) for k in range(n - 1)], np.ones((n, 1)), label)


def complete_graph(n: int, label: int | None = None) -> Graph:
    return Graph.from_edges(n, [(u, v) for u in range(n) for v in range(u + 1, n)], np.ones((n, 1)), label)


def cycles_vs_stars(per_class: int = 100, min_nodes: int = 6, max_nodes: int = 14, seed: int = 0) -> Dataset:
    """Cycle graphs (label 0) and star graphs (label 1) with constant features.

    Sizes are drawn uniformly from ``[min_nodes, max_nodes]`` for both classes.
    """
    rng = substream(seed, "synthetic", "cycles_vs_stars")
    sizes = rng.integers(min_nodes, max_nodes + 1, size=2 * per_class)
    graphs = [cycle_graph(int(n), 0) for n in sizes[:per_class]]
    graphs += [star_graph(int(n), 1) for n in sizes[per_class:]]
    order = rng.permutation(len(graphs))
    return Dataset("CYCLES_VS_STARS", tuple(graphs[k] for k in order))


def random_graph(rng: np.random.Generator, max_nodes: int = 8, feature_dim: int = 3, edge_prob: float = 0.4,
                 label: int | None = None) -> Graph:
    """Erdos-Renyi graph with Gaussian node features."""
    n = int(rng.integers(1, max_nodes + 1))
    iu = np.triu_indices(n, k=1)
    keep = rng.random(len(iu[0])) < edge_prob
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return Graph(n, edges, rng.normal(size=(n, feature_dim)), label)
