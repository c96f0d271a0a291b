"""Frozen-encoder evaluation and selection-heatmap export."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from .augment import matrix_to_csv
from .graph import Dataset, make_batch
from .nn import ModelState, gin_encode
from .optim import TrainHistory
from .rng import substream_seed

C_GRID = (0.01, 0.1, 1.0, 10.0)
INNER_FOLDS = 3


@dataclass
class EmbeddingTable:
    embeddings: np.ndarray
    labels: np.ndarray | None

    def __post_init__(self):
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embedding table has non-finite entries")
        if self.labels is not None and len(self.labels) != len(self.embeddings):
            raise ValueError("labels and embeddings disagree in length")

    def __len__(self):
        return len(self.embeddings)


def embed_dataset(state: ModelState, ds: Dataset, batch_size: int = 256) -> EmbeddingTable:
    """Encoder output (before any projection head) for every graph, unaugmented."""
    if ds.feature_dim != state.encoder.in_dim:
        raise ValueError(f"dataset feature width {ds.feature_dim} != encoder input width {state.encoder.in_dim}")
    rows = [gin_encode(state, make_batch(ds, range(lo, min(lo + batch_size, len(ds)))))
            for lo in range(0, len(ds), batch_size)]
    return EmbeddingTable(np.concatenate(rows), ds.labels())


@dataclass
class ProbeReport:
    mean: float
    std: float
    per_fold: list[float]
    chosen_c: list[float]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "per_fold": self.per_fold, "chosen_C": self.chosen_c}


def linear_probe_cv(table: EmbeddingTable, folds: int = 10, seed: int = 0) -> ProbeReport:
    """Stratified k-fold accuracy of a linear SVM on standardised embeddings.

    C is picked from ``C_GRID`` by an inner 3-fold search on each training split.
    """
    if table.labels is None:
        raise ValueError("linear probe needs graph labels")
    X, y = table.embeddings, np.asarray(table.labels)
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > len(y):
        raise ValueError(f"folds ({folds}) exceeds dataset size ({len(y)})")
    classes, counts = np.unique(y, return_counts=True)
    for c, n in zip(classes, counts):
        if n < folds:
            raise ValueError(f"class {c} has {n} examples, fewer than folds={folds}")
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two classes")

    outer = StratifiedKFold(n_splits=folds, shuffle=True, random_state=substream_seed(seed, "folds") % 2**32)
    accs, chosen = [], []
    for k, (tr, te) in enumerate(outer.split(X, y)):
        rs = substream_seed(seed, "probe", k) % 2**32
        pipe = make_pipeline(StandardScaler(), LinearSVC(dual=True, max_iter=20000, random_state=rs))
        inner_folds = min(INNER_FOLDS, int(np.unique(y[tr], return_counts=True)[1].min()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            if inner_folds >= 2:
                inner = StratifiedKFold(n_splits=inner_folds, shuffle=True, random_state=rs)
                search = GridSearchCV(pipe, {"linearsvc__C": list(C_GRID)}, cv=inner)
                search.fit(X[tr], y[tr])
                model, c = search.best_estimator_, search.best_params_["linearsvc__C"]
            else:
                model, c = pipe.set_params(linearsvc__C=1.0).fit(X[tr], y[tr]), 1.0
        accs.append(float((model.predict(X[te]) == y[te]).mean()))
        chosen.append(float(c))
    return ProbeReport(float(np.mean(accs)), float(np.std(accs)), accs, chosen)


def export_selection_heatmap(history: TrainHistory, path) -> np.ndarray:
    """Write the 5x5 percentage of training steps that used each pair."""
    pct = history.selection_percentages()
    matrix_to_csv(pct, Path(path))
    return pct
