"""Min-max augmentation optimisation.

The sampling distribution ``p`` over the 25 ordered augmentation pairs is
updated by projected gradient ascent on

    psi(p) = <p, L> - gamma/2 * ||p - prior||^2

where ``L`` holds the current per-pair contrastive losses and ``prior`` is
uniform. Model parameters are updated by plain gradient descent on the loss
of one pair sampled from ``p``; the two updates alternate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import KIND_LABELS, POOL_SIZE, AugmentationKind, PairDistribution, parse_pool, pool_mask, sample_pair
from .contrastive import MODES, AugmentOptions, head_index, pair_loss_matrix, weighted_loss
from .errors import ConfigError, NumericalAbort
from .graph import Dataset, make_batch
from .nn import MLP, ModelState, init_state, loss_and_grad, sgd_step
from .rng import substream

log = logging.getLogger(__name__)

BISECT_TOL = 1e-12
_BISECT_MAX_ITER = 200


def _prior(pool=None) -> np.ndarray:
    m = pool_mask(pool)
    return m / m.sum()


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, PairDistribution):
        return x.p
    return np.asarray(x, dtype=np.float64).reshape(POOL_SIZE, POOL_SIZE)


def prior_distance(p, pool=None) -> float:
    """Squared Euclidean distance to the uniform prior."""
    d = _as_matrix(p) - _prior(pool)
    return float((d * d).sum())


def psi(p, L, gamma: float, pool=None) -> float:
    p, L = _as_matrix(p), _as_matrix(L)
    return float((p * L).sum() - 0.5 * gamma * prior_distance(p, pool))


def psi_grad(p, L, gamma: float, pool=None) -> np.ndarray:
    p, L = _as_matrix(p), _as_matrix(L)
    return L - gamma * (p - _prior(pool))


def _excess(b: np.ndarray, mu: float) -> float:
    return float(np.maximum(b - mu, 0.0).sum() - 1.0)


def simplex_threshold(b: np.ndarray, tol: float = BISECT_TOL) -> float:
    """Root ``mu`` of ``sum((b - mu)_+) = 1``.

    Bisection on ``[min(b) - 1, max(b)]`` locates the root to ``tol``; the
    value is then recomputed exactly from the identified support.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    lo, hi = float(b.min()) - 1.0, float(b.max())
    for _ in range(_BISECT_MAX_ITER):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _excess(b, mid) > 0:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    support = b > mu
    exact = (b[support].sum() - 1.0) / support.sum()
    if np.all(b[support] > exact) and np.all(b[~support] <= exact):
        mu = exact
    return float(mu)


def project_simplex_vector(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("cannot project a non-finite vector")
    return np.maximum(b - simplex_threshold(b), 0.0)


def project_simplex(b, pool=None) -> PairDistribution:
    """Euclidean projection of a 25-vector onto the pair simplex.

    With a restricted ``pool`` the projection is onto the face spanned by
    the allowed pairs; other entries are zero.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.shape != (POOL_SIZE * POOL_SIZE,):
        raise ValueError(f"expected {POOL_SIZE * POOL_SIZE} values, got {b.size}")
    allowed = pool_mask(pool).ravel() > 0
    out = np.zeros_like(b)
    out[allowed] = project_simplex_vector(b[allowed])
    return PairDistribution(out)


def lower_step(p, L, gamma: float, lr: float, pool=None) -> PairDistribution:
    """One projected gradient-ascent step on ``psi``."""
    b = _as_matrix(p) + lr * psi_grad(p, L, gamma, pool)
    return project_simplex(b, pool)


def route_heads(mode: str, pair, state: ModelState) -> tuple[MLP, MLP]:
    """Projection heads for view 1 and view 2 of the sampled pair."""
    want = POOL_SIZE if mode == "joaov2" else 1
    if len(state.heads) != want:
        raise ValueError(f"{mode} needs {want} projection head(s), model has {len(state.heads)}")
    i, j = pair
    return state.heads[head_index(mode, i)], state.heads[head_index(mode, j)]


# --- configuration ---------------------------------------------------------------

@dataclass
class JoaoConfig:
    mode: str = "joao"
    gamma: float = 0.1
    lr: float = 0.01
    lr_dist: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    lower_every: int = 0            # minibatches between lower steps; 0 = once per epoch
    fresh_lower_batch: bool = True
    pool: tuple[AugmentationKind, ...] = tuple(AugmentationKind)
    strength: float = 0.2
    tau: float = 1.0
    symmetric: bool = False
    edge_pert_mode: str = "rewire"
    mask_value: float = 0.0
    hidden: int = 32
    layers: int = 3
    proj_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        try:
            self.pool = parse_pool(self.pool if isinstance(self.pool, str) or self.pool is None else list(self.pool))
        except ValueError as exc:
            raise ConfigError(f"pool: {exc}") from None

    def problems(self) -> list[str]:
        out = []
        if self.mode not in MODES:
            out.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            out.append(f"gamma must be a finite number >= 0, got {self.gamma}")
        for name in ("lr", "lr_dist", "tau"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                out.append(f"{name} must be > 0, got {v}")
        for name, lo in (("epochs", 1), ("batch_size", 2), ("hidden", 1), ("layers", 1), ("proj_dim", 1)):
            if int(getattr(self, name)) < lo:
                out.append(f"{name} must be >= {lo}, got {getattr(self, name)}")
        if self.lower_every < 0:
            out.append(f"lower_every must be >= 0, got {self.lower_every}")
        if not 0.0 <= self.strength < 1.0:
            out.append(f"strength must lie in [0, 1), got {self.strength}")
        if self.edge_pert_mode not in ("rewire", "drop_only"):
            out.append(f"edge_pert_mode must be rewire or drop_only, got {self.edge_pert_mode!r}")
        if not self.pool:
            out.append("pool must not be empty")
        return out

    def validate(self) -> "JoaoConfig":
        probs = self.problems()
        if probs:
            raise ConfigError("; ".join(probs))
        return self

    @property
    def num_heads(self) -> int:
        return POOL_SIZE if self.mode == "joaov2" else 1

    def augment_options(self, feature_dim: int) -> AugmentOptions:
        mask = None if self.mask_value == 0.0 else (float(self.mask_value),) * feature_dim
        return AugmentOptions(self.strength, mask, self.edge_pert_mode)

    def to_record(self) -> dict:
        d = asdict(self)
        d["pool"] = [KIND_LABELS[k] for k in self.pool]
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# --- history and run log -----------------------------------------------------------

@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    distributions: list[PairDistribution] = field(default_factory=list)
    loss_matrices: list[np.ndarray] = field(default_factory=list)
    psi_values: list[float] = field(default_factory=list)
    selection_counts: np.ndarray = field(default_factory=lambda: np.zeros((POOL_SIZE, POOL_SIZE), dtype=np.int64))

    def record_pair(self, pair):
        self.selection_counts[int(pair[0]), int(pair[1])] += 1

    @property
    def num_samples(self) -> int:
        return int(self.selection_counts.sum())

    def selection_percentages(self) -> np.ndarray:
        n = self.num_samples
        if n == 0:
            raise ValueError("history holds no sampled pairs")
        return 100.0 * self.selection_counts / n

    @classmethod
    def from_log(cls, records: Sequence[dict]) -> "TrainHistory":
        h = cls()
        for r in records:
            ev = r.get("event")
            if ev == "pair_sampled":
                h.record_pair(r["pair"])
            elif ev == "epoch_loss":
                h.epoch_losses.append(float(r["loss"]))
            elif ev == "lower_step":
                h.distributions.append(PairDistribution(r["distribution"]))
                h.loss_matrices.append(np.array(r["loss_matrix"]).reshape(POOL_SIZE, POOL_SIZE))
                h.psi_values.append(float(r["psi"]))
        return h


class RunLog:
    """JSON-lines event log; records are kept in memory and optionally streamed to a file."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        self._fh = open(self.path, "w", encoding="utf-8") if self.path else None

    def write(self, event: str, **payload):
        rec = {"event": event, **payload}
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def read(path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


# --- alternating gradient descent -------------------------------------------------------

def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index chunks; a trailing chunk of one graph joins the previous chunk."""
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


@dataclass
class TrainResult:
    state: ModelState
    distribution: PairDistribution
    history: TrainHistory


def agd_train(config: JoaoConfig, ds: Dataset, run_log: RunLog | None = None,
              on_epoch_end: Callable[[int, ModelState, PairDistribution], None] | None = None) -> TrainResult:
    """Alternate model descent on sampled-pair losses with projected ascent on ``p``."""
    config.validate()
    if len(ds) < 2:
        raise ConfigError("training needs at least 2 graphs")
    run_log = run_log if run_log is not None else RunLog()
    seed = config.seed
    opts = config.augment_options(ds.feature_dim)
    pool = config.pool
    state = init_state(ds.feature_dim, config.hidden, config.layers, config.proj_dim, config.num_heads, seed)
    p = PairDistribution.uniform(pool)
    history = TrainHistory()
    lower_count = 0
    step_count = 0

    def lower_update(epoch: int, last_idx):
        nonlocal p, lower_count
        if config.fresh_lower_batch:
            rng = substream(seed, "lower-batch", lower_count)
            idx = rng.choice(len(ds), size=min(config.batch_size, len(ds)), replace=False)
        else:
            idx = last_idx
        batch = make_batch(ds, idx)
        L = pair_loss_matrix(state, batch, opts, config.tau, seed, ("lower", lower_count),
                             config.mode, config.symmetric, pool)
        if not np.all(np.isfinite(L)):
            rec = {"epoch": epoch, "lower_step": lower_count, "loss_matrix": [repr(float(x)) for x in L.ravel()]}
            run_log.write("abort", reason="non-finite pair loss", **rec)
            raise NumericalAbort("non-finite entry in pair loss matrix", rec)
        p = lower_step(p, L, config.gamma, config.lr_dist, pool)
        value = psi(p, L, config.gamma, pool)
        history.distributions.append(p)
        history.loss_matrices.append(L)
        history.psi_values.append(value)
        run_log.write("lower_step", epoch=epoch, step=lower_count,
                      loss_matrix=[float(x) for x in L.ravel()],
                      distribution=p.flat(), psi=value,
                      prior_distance=prior_distance(p, pool))
        lower_count += 1

    for epoch in range(1, config.epochs + 1):
        losses = []
        idx = None
        for b, idx in enumerate(minibatches(len(ds), config.batch_size, substream(seed, "shuffle", epoch))):
            pair = sample_pair(p.restricted(pool), substream(seed, "pair", epoch, b))
            batch = make_batch(ds, idx)
            key = ("upper", epoch, b)
            try:
                loss, grads = loss_and_grad(state, lambda f: weighted_loss(
                    f, batch, pair, opts, config.tau, seed, key, config.mode, config.symmetric))
            except NumericalAbort as exc:
                run_log.write("abort", reason=str(exc), epoch=epoch, batch=b,
                              pair=[int(pair[0]), int(pair[1])], **exc.record)
                raise
            state = sgd_step(state, grads, config.lr)
            history.record_pair(pair)
            losses.append(loss)
            run_log.write("pair_sampled", epoch=epoch, batch=b, pair=[int(pair[0]), int(pair[1])],
                          names=[KIND_LABELS[pair[0]], KIND_LABELS[pair[1]]], loss=loss)
            step_count += 1
            if config.lower_every and step_count % config.lower_every == 0:
                lower_update(epoch, idx)
        mean_loss = float(np.mean(losses))
        history.epoch_losses.append(mean_loss)
        run_log.write("epoch_loss", epoch=epoch, loss=mean_loss)
        log.info("epoch %d loss %.5f", epoch, mean_loss)
        if not config.lower_every:
            lower_update(epoch, idx)
        if on_epoch_end is not None:
            on_epoch_end(epoch, state, p)
    return TrainResult(state, p, history)
