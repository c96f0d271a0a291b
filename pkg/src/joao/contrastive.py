"""NT-Xent contrastive loss and the 5x5 matrix of per-pair losses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .augment import POOL_SIZE, AugmentationKind, apply
from .graph import Batch, batch_graphs
from .nn import Forward, ModelState
from .rng import substream

MODES = ("joao", "joaov2")


@dataclass(frozen=True)
class AugmentOptions:
    ratio: float = 0.2
    mask_vector: tuple[float, ...] | None = None
    edge_pert_mode: str = "rewire"


def cosine_sim(u, v, zero_norm: str = "error") -> float:
    """``u.v / (|u| |v|)``. ``zero_norm="zero"`` returns 0 (with a warning) instead of raising."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        if zero_norm == "zero":
            warnings.warn("cosine similarity of a zero vector defined as 0", RuntimeWarning, stacklevel=2)
            return 0.0
        raise ValueError("cosine similarity undefined for a zero-norm vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def nt_xent(z1, z2, tau: float = 1.0, symmetric: bool = False):
    """Mean over anchors k of ``-s(k,k)/tau + log sum_m exp(s(k,m)/tau)``.

    ``s`` is cosine similarity between view-1 row k and view-2 row m; the
    positive partner stays in the denominator. Accepts arrays (returns a
    float) or tensors (returns a scalar tensor on the tape).
    """
    as_float = not isinstance(z1, ad.Tensor) and not isinstance(z2, ad.Tensor)
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    if z1.shape[0] < 2:
        raise ValueError("NT-Xent needs a batch of at least 2 graphs")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    try:
        n1, n2 = ad.normalize_rows(z1), ad.normalize_rows(z2)
    except ZeroDivisionError:
        raise ValueError("zero-norm embedding row in NT-Xent") from None
    sims = (n1 @ n2.T) * (1.0 / tau)
    loss = ad.mean(ad.logsumexp_rows(sims) - ad.diagonal(sims))
    if symmetric:
        back = ad.mean(ad.logsumexp_rows(sims.T) - ad.diagonal(sims))
        loss = (loss + back) * 0.5
    return loss.item() if as_float else loss


def head_index(mode: str, kind) -> int:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return int(kind) if mode == "joaov2" else 0


def augment_batch(graphs: Sequence, kind, opts: AugmentOptions, seed: int, key: tuple) -> Batch:
    """Augment every graph with ``kind``; graph at position ``p`` uses substream ``(*key, p)``."""
    mask = None if opts.mask_vector is None else np.asarray(opts.mask_vector)
    out = [
        apply(kind, g, opts.ratio, substream(seed, *key, p), mask_vector=mask, edge_pert_mode=opts.edge_pert_mode)
        for p, g in enumerate(graphs)
    ]
    return batch_graphs(out)


def view_key(key: tuple, side: int, kind) -> tuple:
    return (*key, "view", side, int(kind))


def pair_loss_matrix(state: ModelState, batch: Batch, opts: AugmentOptions, tau: float, seed: int,
                     key: tuple, mode: str = "joao", symmetric: bool = False,
                     pool: Sequence[AugmentationKind] | None = None) -> np.ndarray:
    """Entry ``(i, j)``: NT-Xent of the batch under view-1 kind i and view-2 kind j.

    Each (side, kind) view is augmented and encoded once and reused across
    pairs. Entries for kinds outside ``pool`` are left at 0.
    """
    kinds = tuple(AugmentationKind) if pool is None else tuple(pool)
    fwd = Forward(state)
    z = {}
    for side in (1, 2):
        for k in kinds:
            aug = augment_batch(batch.graphs, k, opts, seed, view_key(key, side, k))
            z[side, k] = fwd.project(fwd.encode(aug), head_index(mode, k)).data
    out = np.zeros((POOL_SIZE, POOL_SIZE))
    for i in kinds:
        for j in kinds:
            out[i, j] = nt_xent(z[1, i], z[2, j], tau, symmetric)
    return out


def weighted_loss(fwd: Forward, batch: Batch, pair, opts: AugmentOptions, tau: float, seed: int,
                  key: tuple, mode: str = "joao", symmetric: bool = False) -> ad.Tensor:
    """Differentiable loss of one sampled pair; matches ``pair_loss_matrix`` under the same key."""
    i, j = (AugmentationKind(k) for k in pair)
    v1 = augment_batch(batch.graphs, i, opts, seed, view_key(key, 1, i))
    v2 = augment_batch(batch.graphs, j, opts, seed, view_key(key, 2, j))
    z1 = fwd.project(fwd.encode(v1), head_index(mode, i))
    z2 = fwd.project(fwd.encode(v2), head_index(mode, j))
    return nt_xent(z1, z2, tau, symmetric)


# --- negative-term harness ------------------------------------------------------
# sims[i, j, g, h] = cosine similarity of graph g under view-1 kind i with
# graph h under view-2 kind j.

def cross_similarities(state: ModelState, batch: Batch, opts: AugmentOptions, seed: int, key: tuple,
                       mode: str = "joao", tau: float = 1.0) -> np.ndarray:
    fwd = Forward(state)
    z = {}
    for side in (1, 2):
        for k in AugmentationKind:
            aug = augment_batch(batch.graphs, k, opts, seed, view_key(key, side, k))
            zz = fwd.project(fwd.encode(aug), head_index(mode, k)).data
            z[side, k] = zz / np.linalg.norm(zz, axis=1, keepdims=True)
    sims = np.empty((POOL_SIZE, POOL_SIZE, batch.num_graphs, batch.num_graphs))
    for i in AugmentationKind:
        for j in AugmentationKind:
            sims[i, j] = z[1, i] @ z[2, j].T / tau
    return sims


def negative_term_exact(sims: np.ndarray, p) -> float:
    """``E_G E_A1 log E_{G', A2} exp(sim)`` with the view-2 kind inside the log."""
    p = np.asarray(p, dtype=np.float64).reshape(POOL_SIZE, POOL_SIZE)
    p1, p2 = p.sum(axis=1), p.sum(axis=0)
    inner = np.exp(sims).mean(axis=3)                    # (i, j, g)
    mixed = np.einsum("j,ijg->ig", p2, inner)
    with np.errstate(divide="ignore"):
        logs = np.log(mixed)
    return float(np.einsum("i,ig->", p1, np.where(p1[:, None] > 0, logs, 0.0)) / sims.shape[2])


def negative_term_jensen(sims: np.ndarray, p) -> float:
    """Lower bound with the view-2 kind pulled outside the log (product of marginals)."""
    p = np.asarray(p, dtype=np.float64).reshape(POOL_SIZE, POOL_SIZE)
    p1, p2 = p.sum(axis=1), p.sum(axis=0)
    logs = np.log(np.exp(sims).mean(axis=3))             # (i, j, g)
    return float(np.einsum("i,j,ijg->", p1, p2, logs) / sims.shape[2])


def negative_term_approx(sims: np.ndarray, p) -> float:
    """The training surrogate: the joint ``p_ij`` replaces the product of marginals."""
    p = np.asarray(p, dtype=np.float64).reshape(POOL_SIZE, POOL_SIZE)
    logs = np.log(np.exp(sims).mean(axis=3))
    return float(np.einsum("ij,ijg->", p, logs) / sims.shape[2])
