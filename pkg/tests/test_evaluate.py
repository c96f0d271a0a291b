import numpy as np
import pytest

from joao.evaluate import EmbeddingTable, embed_dataset, export_selection_heatmap, linear_probe_cv
from joao.graph import Dataset
from joao.nn import init_state
from joao.optim import TrainHistory
from joao.synthetic import cycle_graph


def blobs(n_per=50, dim=4, sep=10.0, seed=0):
    r = np.random.default_rng(seed)
    x = np.concatenate([r.normal(size=(n_per, dim)), r.normal(size=(n_per, dim)) + sep])
    return EmbeddingTable(x, np.repeat([0, 1], n_per))


class TestProbe:
    def test_separable_blobs(self):
        rep = linear_probe_cv(blobs(), folds=10)
        assert rep.mean >= 0.99
        assert len(rep.per_fold) == 10 and len(rep.chosen_c) == 10
        assert set(rep.to_dict()) == {"mean", "std", "per_fold", "chosen_C"}

    def test_shuffled_labels_at_chance(self):
        r = np.random.default_rng(1)
        means = []
        for s in range(20):
            t = blobs(seed=s)
            means.append(linear_probe_cv(EmbeddingTable(t.embeddings, r.permutation(t.labels)), 5, s).mean)
        # 20 runs of 100 held-out predictions each: sd of the grand mean is 0.5 / sqrt(2000)
        assert abs(np.mean(means) - 0.5) <= 3 * 0.5 / np.sqrt(2000)

    def test_column_permutation_invariant(self, rng):
        t = blobs(sep=1.0, seed=3)
        perm = rng.permutation(4)
        a = linear_probe_cv(t, 5, 7)
        b = linear_probe_cv(EmbeddingTable(t.embeddings[:, perm], t.labels), 5, 7)
        assert a.per_fold == pytest.approx(b.per_fold, abs=0.02)

    def test_fold_assignment_deterministic(self):
        t = blobs(sep=1.0)
        assert linear_probe_cv(t, 5, 3).per_fold == linear_probe_cv(t, 5, 3).per_fold

    def test_errors(self):
        t = blobs(n_per=4)
        with pytest.raises(ValueError, match="exceeds"):
            linear_probe_cv(t, folds=9)
        with pytest.raises(ValueError, match="class 1"):
            linear_probe_cv(EmbeddingTable(t.embeddings, np.array([0] * 7 + [1])), folds=2)
        with pytest.raises(ValueError):
            linear_probe_cv(t, folds=1)
        with pytest.raises(ValueError):
            linear_probe_cv(EmbeddingTable(t.embeddings, None))
        with pytest.raises(ValueError):
            EmbeddingTable(np.full((2, 2), np.nan), None)


class TestEmbed:
    def test_rows_and_determinism(self, small_dataset):
        s = init_state(2, hidden=8, seed=0)
        a = embed_dataset(s, small_dataset, batch_size=5)
        b = embed_dataset(s, small_dataset)
        assert a.embeddings.shape == (12, 8)
        np.testing.assert_allclose(a.embeddings, b.embeddings, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(a.labels, small_dataset.labels())

    def test_isomorphic_graphs_share_rows(self, rng):
        g = cycle_graph(6)
        ds = Dataset("iso", (g, g.permuted(rng.permutation(6))))
        e = embed_dataset(init_state(1, seed=2), ds).embeddings
        np.testing.assert_allclose(e[0], e[1], rtol=1e-12)

    def test_width_mismatch(self, small_dataset):
        with pytest.raises(ValueError):
            embed_dataset(init_state(3), small_dataset)


class TestHeatmap:
    def test_percentages(self, tmp_path):
        h = TrainHistory()
        for pair in [(0, 0), (0, 0), (1, 3), (4, 2)]:
            h.record_pair(pair)
        pct = export_selection_heatmap(h, tmp_path / "s.csv")
        assert pct[0, 0] == 50.0 and pct[1, 3] == 25.0 and pct[4, 2] == 25.0
        assert pct.sum() == 100.0
        rows = (tmp_path / "s.csv").read_text().strip().splitlines()
        assert len(rows) == 5 and all(len(r.split(",")) == 5 for r in rows)

    def test_empty_history(self, tmp_path):
        with pytest.raises(ValueError):
            export_selection_heatmap(TrainHistory(), tmp_path / "s.csv")
