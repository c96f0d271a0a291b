"""The augmentation pool and the categorical sampler over augmentation pairs."""

from __future__ import annotations

import csv
import enum
import io
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .graph import Graph

POOL_SIZE = 5
EDGE_PERT_MODES = ("rewire", "drop_only")


class AugmentationKind(enum.IntEnum):
    NODE_DROP = 0
    SUBGRAPH = 1
    EDGE_PERT = 2
    ATTR_MASK = 3
    IDENTICAL = 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "AugmentationKind":
        key = text.strip().replace("_", "").replace("-", "").lower()
        for kind, label in _LABELS.items():
            if label.lower() == key:
                return kind
        raise ValueError(f"unknown augmentation {text!r}; expected one of {', '.join(_LABELS.values())}")


_LABELS = {
    AugmentationKind.NODE_DROP: "NodeDrop",
    AugmentationKind.SUBGRAPH: "Subgraph",
    AugmentationKind.EDGE_PERT: "EdgePert",
    AugmentationKind.ATTR_MASK: "AttrMask",
    AugmentationKind.IDENTICAL: "Identical",
}
KIND_LABELS = tuple(_LABELS[k] for k in AugmentationKind)


def parse_pool(text: str | Iterable[str] | None) -> tuple[AugmentationKind, ...]:
    """``"NodeDrop,Subgraph"`` -> kinds in pool order. ``None`` means all five."""
    if text is None:
        return tuple(AugmentationKind)
    parts = text.split(",") if isinstance(text, str) else list(text)
    kinds = {AugmentationKind.parse(p) if isinstance(p, str) else AugmentationKind(p)
             for p in parts if not isinstance(p, str) or p.strip()}
    if not kinds:
        raise ValueError("augmentation pool must not be empty")
    return tuple(sorted(kinds))


def check_ratio(ratio: float) -> float:
    ratio = float(ratio)
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"augmentation strength must lie in [0, 1), got {ratio}")
    return ratio


# --- operators -------------------------------------------------------------

def _induced(g: Graph, keep: np.ndarray) -> Graph:
    keep = np.sort(keep)
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = g.edges
    if len(e):
        inside = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
        e = remap[e[inside]]
    return Graph(len(keep), e, g.features[keep], g.label)


def node_drop(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Remove ``floor(ratio * n)`` uniformly chosen nodes and their edges."""
    n = g.num_nodes
    k = min(math.floor(check_ratio(ratio) * n), n - 1)
    if k == 0:
        return g.replace()
    dropped = rng.choice(n, size=k, replace=False)
    keep = np.setdiff1d(np.arange(n), dropped)
    return _induced(g, keep)


def _neighbours(g: Graph) -> list[np.ndarray]:
    n = g.num_nodes
    e = g.edges
    if not len(e):
        return [np.zeros(0, dtype=np.int64) for _ in range(n)]
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(n + 1))
    return [dst[bounds[v]:bounds[v + 1]] for v in range(n)]


def subgraph(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Induced subgraph on the nodes visited by a random walk.

    The walk starts at a uniform node and stops after ``ceil((1 - ratio) * n)``
    distinct nodes or ``10 * n`` steps. A shortfall is topped up with nodes
    drawn uniformly from the unvisited neighbours of the visited set, so the
    result stays connected and inside the start node's component.
    """
    n = g.num_nodes
    target = max(1, math.ceil((1.0 - check_ratio(ratio)) * n))
    nbrs = _neighbours(g)
    current = int(rng.integers(n))
    visited = {current}
    budget = 10 * n
    steps = 0
    while len(visited) < target and steps < budget and len(nbrs[current]):
        current = int(nbrs[current][rng.integers(len(nbrs[current]))])
        visited.add(current)
        steps += 1
    while len(visited) < target:
        frontier = sorted({int(u) for v in visited for u in nbrs[v]} - visited)
        if not frontier:
            break
        visited.add(frontier[int(rng.integers(len(frontier)))])
    return _induced(g, np.fromiter(visited, dtype=np.int64))


def edge_pert(g: Graph, ratio: float, rng: np.random.Generator, mode: str = "rewire") -> Graph:
    """Remove ``k = floor(ratio * |E|)`` edges, then add ``k`` new ones.

    New edges are drawn by rejection sampling from pairs that are absent
    after the removal; if fewer than ``k`` such pairs exist all of them are
    added. ``mode="drop_only"`` skips the additions.
    """
    if mode not in EDGE_PERT_MODES:
        raise ValueError(f"edge_pert mode must be one of {EDGE_PERT_MODES}, got {mode!r}")
    n, m = g.num_nodes, g.num_edges
    k = math.floor(check_ratio(ratio) * m)
    if k == 0:
        return g.replace()
    removed = rng.choice(m, size=k, replace=False)
    kept = np.delete(g.edges, removed, axis=0)
    if mode == "drop_only":
        return g.replace(edges=kept)

    present = {(int(u), int(v)) for u, v in kept}
    available = n * (n - 1) // 2 - len(present)
    added: list[tuple[int, int]] = []
    if available <= k:
        added = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in present]
    else:
        while len(added) < k:
            u, v = (int(x) for x in rng.integers(n, size=2))
            if u == v:
                continue
            pair = (min(u, v), max(u, v))
            if pair in present:
                continue
            present.add(pair)
            added.append(pair)
    edges = np.concatenate([kept, np.array(added, dtype=np.int64).reshape(-1, 2)])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return g.replace(edges=edges[order])


def attr_mask(g: Graph, ratio: float, rng: np.random.Generator, mask_vector=None) -> Graph:
    """Overwrite the feature rows of ``floor(ratio * n)`` nodes with ``mask_vector`` (zeros by default)."""
    n, d = g.num_nodes, g.feature_dim
    mask = np.zeros(d) if mask_vector is None else np.asarray(mask_vector, dtype=np.float64).ravel()
    if mask.shape != (d,):
        raise ValueError(f"mask vector width {mask.shape[0]} does not match feature width {d}")
    k = math.floor(check_ratio(ratio) * n)
    if k == 0:
        return g.replace()
    idx = rng.choice(n, size=k, replace=False)
    feats = g.features.copy()
    feats[idx] = mask
    return g.replace(features=feats)


def apply(kind, g: Graph, ratio: float, rng: np.random.Generator, *,
          mask_vector=None, edge_pert_mode: str = "rewire") -> Graph:
    kind = AugmentationKind(kind)
    if kind is AugmentationKind.NODE_DROP:
        return node_drop(g, ratio, rng)
    if kind is AugmentationKind.SUBGRAPH:
        return subgraph(g, ratio, rng)
    if kind is AugmentationKind.EDGE_PERT:
        return edge_pert(g, ratio, rng, mode=edge_pert_mode)
    if kind is AugmentationKind.ATTR_MASK:
        return attr_mask(g, ratio, rng, mask_vector)
    return g.replace()


# --- pair distribution -------------------------------------------------------

class PairDistribution:
    """Probabilities ``p[i, j]`` of the ordered pair (view-1 kind i, view-2 kind j)."""

    SUM_TOL = 1e-9

    def __init__(self, p):
        p = np.array(p, dtype=np.float64)
        if p.shape == (POOL_SIZE * POOL_SIZE,):
            p = p.reshape(POOL_SIZE, POOL_SIZE)
        if p.shape != (POOL_SIZE, POOL_SIZE):
            raise ValueError(f"pair distribution must be {POOL_SIZE}x{POOL_SIZE}, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("pair distribution has non-finite entries")
        if p.min() < 0:
            i, j = np.unravel_index(np.argmin(p), p.shape)
            raise ValueError(f"negative probability {p[i, j]} at ({KIND_LABELS[i]}, {KIND_LABELS[j]})")
        if abs(p.sum() - 1.0) > self.SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.flags.writeable = False
        self.p = p

    @classmethod
    def uniform(cls, pool=None) -> "PairDistribution":
        mask = pool_mask(pool)
        return cls(mask / mask.sum())

    @classmethod
    def dirac(cls, first, second) -> "PairDistribution":
        p = np.zeros((POOL_SIZE, POOL_SIZE))
        p[int(first), int(second)] = 1.0
        return cls(p)

    def first_marginal(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def second_marginal(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def restricted(self, pool) -> "PairDistribution":
        """Zero rows/columns outside ``pool`` and renormalise."""
        q = self.p * pool_mask(pool)
        total = q.sum()
        if total <= 0:
            return PairDistribution.uniform(pool)
        return PairDistribution(q / total)

    def flat(self) -> list[float]:
        return [float(x) for x in self.p.ravel()]

    def __eq__(self, other):
        return isinstance(other, PairDistribution) and np.array_equal(self.p, other.p)

    def __repr__(self):
        return f"PairDistribution({np.array2string(self.p, precision=4)})"


def pool_mask(pool=None) -> np.ndarray:
    """5x5 0/1 matrix, ones where both kinds belong to ``pool``."""
    v = np.zeros(POOL_SIZE)
    v[list(parse_pool(pool))] = 1.0
    return np.outer(v, v)


def sample_pair(dist: PairDistribution, rng: np.random.Generator) -> tuple[AugmentationKind, AugmentationKind]:
    if not isinstance(dist, PairDistribution):
        dist = PairDistribution(dist)
    cdf = np.cumsum(dist.p.ravel())
    u = rng.random() * cdf[-1]
    k = min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)
    while dist.p.flat[k] == 0.0:
        k -= 1
    i, j = divmod(k, POOL_SIZE)
    return AugmentationKind(i), AugmentationKind(j)


# --- CSV ---------------------------------------------------------------------

def matrix_to_csv(matrix, path=None, header: bool = False) -> str:
    """5 rows (view-1 kind) x 5 columns (view-2 kind) in pool order."""
    m = np.asarray(matrix, dtype=np.float64).reshape(POOL_SIZE, POOL_SIZE)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(["", *KIND_LABELS])
    for i, row in enumerate(m):
        cells = [repr(float(x)) for x in row]
        w.writerow([KIND_LABELS[i], *cells] if header else cells)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def matrix_from_csv(source) -> np.ndarray:
    """Inverse of :func:`matrix_to_csv`; accepts a path or the CSV text, with or without labels."""
    text = Path(source).read_text() if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()) else str(source)
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and rows[0] and rows[0][0].strip() == "":
        rows = rows[1:]
    values = []
    for r in rows:
        cells = [c.strip() for c in r]
        if cells and cells[0] in KIND_LABELS:
            cells = cells[1:]
        values.append([float(c) for c in cells])
    m = np.array(values, dtype=np.float64)
    if m.shape != (POOL_SIZE, POOL_SIZE):
        raise ValueError(f"expected a {POOL_SIZE}x{POOL_SIZE} matrix, got shape {m.shape}")
    return m
