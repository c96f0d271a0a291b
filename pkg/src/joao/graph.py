"""Graph data model, TUDataset ingestion, disjoint-union batching and statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DatasetError, MissingFileError


def _canonical_edges(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    return np.sort(arr, axis=1)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with dense node features.

    ``edges`` holds one row ``(u, v)`` with ``u < v`` per undirected edge.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        edges = _canonical_edges(self.edges)
        features = np.array(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))
        edges.flags.writeable = False
        features.flags.writeable = False
        self._validate()

    def _validate(self):
        n = self.num_nodes
        if n < 1:
            raise DatasetError("graph must have at least one node")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(
                f"feature matrix has {self.features.shape[0]} rows for {n} nodes"
            )
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise DatasetError(f"edge endpoint out of range [0, {n})")
            if np.any(e[:, 0] == e[:, 1]):
                raise DatasetError("self-loops are not allowed")
            keys = e[:, 0] * n + e[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise DatasetError("duplicate undirected edge")

    @classmethod
    def from_edges(cls, num_nodes, edges, features, label=None) -> "Graph":
        """Build a graph from a loose edge list: orientation, duplicates and
        self-loops are cleaned up instead of rejected."""
        e = _canonical_edges(edges)
        if len(e):
            e = e[e[:, 0] != e[:, 1]]
            e = np.unique(e, axis=0)
        return cls(num_nodes, e, features, label)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    def replace(self, **changes) -> "Graph":
        kw = dict(num_nodes=self.num_nodes, edges=self.edges, features=self.features, label=self.label)
        kw.update(changes)
        return Graph(**kw)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(self.num_nodes, inv[self.edges] if len(self.edges) else self.edges,
                     self.features[perm], self.label)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.label == other.label
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, feature_dim={self.feature_dim}, label={self.label})"


@dataclass(frozen=True)
class Dataset:
    name: str
    graphs: tuple[Graph, ...]
    feature_dim: int = field(init=False)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise DatasetError(f"dataset {self.name!r} is empty")
        dims = {g.feature_dim for g in graphs}
        if len(dims) != 1:
            raise DatasetError(f"graphs disagree on feature width: {sorted(dims)}")
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "feature_dim", dims.pop())

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i) -> Graph:
        return self.graphs[i]

    def labels(self) -> np.ndarray | None:
        if any(g.label is None for g in self.graphs):
            return None
        return np.array([g.label for g in self.graphs], dtype=np.int64)


@dataclass(frozen=True)
class Stats:
    num_graphs: int
    avg_nodes: float
    avg_edges: float
    avg_degree: float

    def summary(self) -> str:
        return f"{self.num_graphs} graphs, avg nodes {self.avg_nodes:.2f}, avg degree {self.avg_degree:.2f}"


def dataset_stats(ds: Dataset) -> Stats:
    """Graph count, mean node count and average degree.

    Average degree is total undirected edges over total nodes, i.e. mean edge
    count divided by mean node count.
    """
    nodes = sum(g.num_nodes for g in ds.graphs)
    edges = sum(g.num_edges for g in ds.graphs)
    n = len(ds)
    return Stats(n, nodes / n, edges / n, edges / nodes)


@dataclass(frozen=True, eq=False)
class Batch:
    """Disjoint union of several graphs.

    ``offsets[k]`` is the first merged node index of member ``k``;
    ``offsets[-1]`` equals the merged node count.
    """

    graph: Graph
    graph_indicator: np.ndarray
    offsets: np.ndarray
    graphs: tuple[Graph, ...]

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    def split(self) -> list[Graph]:
        out = []
        e = self.graph.edges
        owner = self.graph_indicator[e[:, 0]] if len(e) else np.zeros(0, dtype=np.int64)
        for k in range(self.num_graphs):
            lo, hi = self.offsets[k], self.offsets[k + 1]
            ek = e[owner == k] - lo
            out.append(Graph(hi - lo, ek, self.graph.features[lo:hi], self.graphs[k].label))
        return out

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency of the merged graph."""
        n = self.graph.num_nodes
        e = self.graph.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def pooling(self) -> sp.csr_matrix:
        """``num_graphs x num_nodes`` indicator matrix used for sum readout."""
        n = self.graph.num_nodes
        data = np.ones(n, dtype=np.float64)
        return sp.csr_matrix((data, (self.graph_indicator, np.arange(n))), shape=(self.num_graphs, n))


def batch_graphs(graphs: Sequence[Graph]) -> Batch:
    graphs = tuple(graphs)
    if not graphs:
        raise DatasetError("cannot batch an empty list of graphs")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edges = [g.edges + offsets[k] for k, g in enumerate(graphs)]
    merged = Graph(
        int(offsets[-1]),
        np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64),
        np.concatenate([g.features for g in graphs]),
    )
    indicator = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    return Batch(merged, indicator, offsets, graphs)


def make_batch(ds: Dataset, indices: Sequence[int]) -> Batch:
    indices = list(indices)
    if not indices:
        raise DatasetError("make_batch needs at least one graph index")
    for i in indices:
        if not 0 <= i < len(ds):
            raise DatasetError(f"graph index {i} out of range for dataset of {len(ds)}")
    return batch_graphs([ds.graphs[i] for i in indices])


# --- TUDataset flat files -------------------------------------------------

def _read_rows(path: Path) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([tok.strip() for tok in line.split(",")])
    return rows


def _read_ints(path: Path, name: str) -> np.ndarray:
    try:
        return np.array([int(r[0]) for r in _read_rows(path)], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"{name}: non-integer entry ({exc})") from None


def parse_tudataset(directory, name: str) -> Dataset:
    """Read ``<name>_A.txt``, ``<name>_graph_indicator.txt`` and the optional
    label/attribute files from ``directory``.

    Node features are the attribute rows when ``<name>_node_attributes.txt``
    exists, otherwise one-hot node labels, otherwise the constant ``[1]``.
    """
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(f"dataset directory not found: {d}")
    path_a = d / f"{name}_A.txt"
    path_ind = d / f"{name}_graph_indicator.txt"
    for p in (path_a, path_ind):
        if not p.is_file():
            raise MissingFileError(f"missing mandatory file: {p}")

    indicator = _read_ints(path_ind, path_ind.name)
    n_total = len(indicator)
    if n_total == 0:
        raise DatasetError(f"{path_ind.name} is empty")
    if indicator.min() < 1:
        raise DatasetError(f"{path_ind.name}: graph ids are 1-indexed, found {indicator.min()}")
    n_graphs = int(indicator.max())
    sizes = np.bincount(indicator - 1, minlength=n_graphs)
    if np.any(sizes == 0):
        empty = int(np.flatnonzero(sizes == 0)[0]) + 1
        raise DatasetError(f"graph {empty} has no nodes")

    try:
        raw = np.array([[int(r[0]), int(r[1])] for r in _read_rows(path_a)], dtype=np.int64).reshape(-1, 2)
    except (ValueError, IndexError) as exc:
        raise DatasetError(f"{path_a.name}: malformed edge line ({exc})") from None
    if len(raw) and (raw.min() < 1 or raw.max() > n_total):
        raise DatasetError(f"{path_a.name}: node id out of range [1, {n_total}]")

    # global 0-indexed node -> (graph, local index); local order = file order
    gid = indicator - 1
    order = np.argsort(gid, kind="stable")
    local = np.empty(n_total, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    local[order] = np.arange(n_total) - np.repeat(starts[:-1], sizes)

    raw = raw - 1
    if len(raw) and np.any(gid[raw[:, 0]] != gid[raw[:, 1]]):
        bad = raw[gid[raw[:, 0]] != gid[raw[:, 1]]][0] + 1
        raise DatasetError(f"{path_a.name}: edge {tuple(int(x) for x in bad)} crosses graph boundary")

    features = _node_features(d, name, n_total)
    graph_labels = None
    path_gl = d / f"{name}_graph_labels.txt"
    if path_gl.is_file():
        graph_labels = _read_ints(path_gl, path_gl.name)
        if len(graph_labels) != n_graphs:
            raise DatasetError(f"{path_gl.name}: {len(graph_labels)} labels for {n_graphs} graphs")

    # group edges by owning graph
    e_gid = gid[raw[:, 0]] if len(raw) else np.zeros(0, dtype=np.int64)
    e_order = np.argsort(e_gid, kind="stable")
    e_counts = np.bincount(e_gid, minlength=n_graphs)
    e_starts = np.concatenate([[0], np.cumsum(e_counts)])
    local_edges = local[raw[e_order]] if len(raw) else np.zeros((0, 2), dtype=np.int64)
    feat_sorted = features[order]

    graphs = []
    for k in range(n_graphs):
        ek = local_edges[e_starts[k]:e_starts[k + 1]]
        fk = feat_sorted[starts[k]:starts[k + 1]]
        label = None if graph_labels is None else int(graph_labels[k])
        graphs.append(Graph.from_edges(int(sizes[k]), ek, fk, label))
    return Dataset(name, tuple(graphs))


def _node_features(d: Path, name: str, n_total: int) -> np.ndarray:
    path_attr = d / f"{name}_node_attributes.txt"
    path_lab = d / f"{name}_node_labels.txt"
    if path_attr.is_file():
        rows = _read_rows(path_attr)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise DatasetError(f"{path_attr.name}: ragged attribute rows (widths {sorted(widths)})")
        if len(rows) != n_total:
            raise DatasetError(f"{path_attr.name}: {len(rows)} rows for {n_total} nodes")
        try:
            return np.array([[float(x) for x in r] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise DatasetError(f"{path_attr.name}: non-numeric attribute ({exc})") from None
    if path_lab.is_file():
        labels = _read_ints(path_lab, path_lab.name)
        if len(labels) != n_total:
            raise DatasetError(f"{path_lab.name}: {len(labels)} labels for {n_total} nodes")
        if labels.min() < 0:
            raise DatasetError(f"{path_lab.name}: negative node label {labels.min()}")
        onehot = np.zeros((n_total, int(labels.max()) + 1), dtype=np.float64)
        onehot[np.arange(n_total), labels] = 1.0
        return onehot
    return np.ones((n_total, 1), dtype=np.float64)


def write_tudataset(ds: Dataset, directory, name: str | None = None) -> Path:
    """Write ``ds`` in TUDataset layout; features go to the attribute file."""
    name = name or ds.name
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, attr_lines = [], [], []
    base = 0
    for k, g in enumerate(ds.graphs):
        for u, v in g.edges:
            a_lines.append(f"{u + base + 1}, {v + base + 1}")
            a_lines.append(f"{v + base + 1}, {u + base + 1}")
        ind_lines.extend([str(k + 1)] * g.num_nodes)
        attr_lines.extend(", ".join(repr(float(x)) for x in row) for row in g.features)
        base += g.num_nodes
    (d / f"{name}_A.txt").write_text("\n".join(a_lines) + ("\n" if a_lines else ""))
    (d / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (d / f"{name}_node_attributes.txt").write_text("\n".join(attr_lines) + "\n")
    labels = ds.labels()
    if labels is not None:
        (d / f"{name}_graph_labels.txt").write_text("\n".join(str(int(x)) for x in labels) + "\n")
    return d
