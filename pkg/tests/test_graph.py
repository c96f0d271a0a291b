import numpy as np
import pytest

from joao.errors import DatasetError, MissingFileError
from joao.graph import Dataset, Graph, batch_graphs, dataset_stats, make_batch, parse_tudataset, write_tudataset
from joao.synthetic import cycle_graph, path_graph, star_graph

from conftest import DATA_DIR


def _write(d, name, **files):
    d.mkdir(parents=True, exist_ok=True)
    for suffix, text in files.items():
        (d / f"{name}_{suffix}.txt").write_text(text)
    return d


class TestGraphInvariants:
    def test_rejects_out_of_range_edge(self):
        with pytest.raises(DatasetError):
            Graph(3, [(0, 3)], np.ones((3, 1)))

    def test_rejects_self_loop(self):
        with pytest.raises(DatasetError):
            Graph(3, [(1, 1)], np.ones((3, 1)))

    def test_rejects_duplicate_undirected_edge(self):
        with pytest.raises(DatasetError):
            Graph(3, [(0, 1), (1, 0)], np.ones((3, 1)))

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(DatasetError):
            Graph(3, [], np.ones((2, 1)))

    def test_rejects_empty_graph(self):
        with pytest.raises(DatasetError):
            Graph(0, [], np.ones((0, 1)))

    def test_from_edges_cleans(self):
        g = Graph.from_edges(3, [(1, 0), (0, 1), (2, 2), (2, 1)], np.ones((3, 1)))
        assert g.edge_set() == {(0, 1), (1, 2)}

    def test_dataset_requires_common_width(self):
        with pytest.raises(DatasetError):
            Dataset("x", (Graph(1, [], np.ones((1, 1))), Graph(1, [], np.ones((1, 2)))))
        with pytest.raises(DatasetError):
            Dataset("x", ())


class TestParse:
    def test_two_node_fixture(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1, 2\n2, 1\n", graph_indicator="1\n1\n")
        ds = parse_tudataset(d, "T")
        assert len(ds) == 1
        g = ds[0]
        assert g.num_nodes == 2 and g.num_edges == 1
        np.testing.assert_array_equal(g.features, [[1.0], [1.0]])

    def test_missing_indicator(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1, 2\n")
        with pytest.raises(MissingFileError):
            parse_tudataset(d, "T")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(MissingFileError):
            parse_tudataset(tmp_path / "nope", "nope")

    def test_ids_remapped_per_graph(self, tmp_path):
        d = _write(tmp_path / "T", "T",
                   A="1,2\n2,1\n3,4\n4,3\n4,5\n5,4\n",
                   graph_indicator="1\n1\n2\n2\n2\n",
                   graph_labels="0\n1\n")
        ds = parse_tudataset(d, "T")
        assert [g.num_nodes for g in ds.graphs] == [2, 3]
        assert ds[1].edge_set() == {(0, 1), (1, 2)}
        assert list(ds.labels()) == [0, 1]

    def test_node_labels_one_hot_dataset_wide(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1,2\n", graph_indicator="1\n1\n2\n", node_labels="0\n2\n1\n")
        ds = parse_tudataset(d, "T")
        assert ds.feature_dim == 3
        np.testing.assert_array_equal(ds[0].features, [[1, 0, 0], [0, 0, 1]])
        np.testing.assert_array_equal(ds[1].features, [[0, 1, 0]])

    def test_attributes_override_labels(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1,2\n", graph_indicator="1\n1\n",
                   node_labels="0\n1\n", node_attributes="0.5, 1.5\n-2 , 3\n")
        ds = parse_tudataset(d, "T")
        np.testing.assert_array_equal(ds[0].features, [[0.5, 1.5], [-2, 3]])

    def test_ragged_attributes(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1,2\n", graph_indicator="1\n1\n", node_attributes="1,2\n3\n")
        with pytest.raises(DatasetError, match="ragged"):
            parse_tudataset(d, "T")

    def test_edge_index_out_of_range(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1,3\n", graph_indicator="1\n1\n")
        with pytest.raises(DatasetError, match="out of range"):
            parse_tudataset(d, "T")

    def test_edge_crossing_graphs(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="1,2\n", graph_indicator="1\n2\n")
        with pytest.raises(DatasetError, match="crosses"):
            parse_tudataset(d, "T")

    def test_empty_graph_rejected(self, tmp_path):
        d = _write(tmp_path / "T", "T", A="", graph_indicator="1\n3\n")
        with pytest.raises(DatasetError, match="no nodes"):
            parse_tudataset(d, "T")

    def test_edge_line_order_irrelevant(self, tmp_path):
        lines = ["1,2", "2,1", "2,3", "3,2", "1,3", "3,1", "4,5", "5,4"]
        a = _write(tmp_path / "A", "T", A="\n".join(lines), graph_indicator="1\n1\n1\n2\n2\n")
        b = _write(tmp_path / "B", "T", A="\n".join(reversed(lines)), graph_indicator="1\n1\n1\n2\n2\n")
        da, db = parse_tudataset(a, "T"), parse_tudataset(b, "T")
        assert all(x == y for x, y in zip(da.graphs, db.graphs))
        assert dataset_stats(da) == dataset_stats(db)

    def test_round_trip(self, tmp_path, small_dataset):
        write_tudataset(small_dataset, tmp_path / "S", "S")
        back = parse_tudataset(tmp_path / "S", "S")
        assert all(x == y for x, y in zip(small_dataset.graphs, back.graphs))

    def test_real_mutag(self):
        ds = parse_tudataset(DATA_DIR / "MUTAG", "MUTAG")
        st = dataset_stats(ds)
        assert st.num_graphs == 188
        assert sum(g.num_nodes for g in ds.graphs) == 3371
        assert sum(g.num_edges for g in ds.graphs) == 3721
        assert st.avg_nodes == pytest.approx(17.93, abs=0.01)
        assert st.avg_degree == pytest.approx(3721 / 3371)
        assert ds.feature_dim == 7
        assert set(ds.labels()) == {-1, 1}


class TestStats:
    def test_triangle(self, triangle):
        st = dataset_stats(Dataset("t", (triangle,)))
        assert (st.num_graphs, st.avg_nodes, st.avg_degree) == (1, 3.0, 1.0)
        assert st.summary() == "1 graphs, avg nodes 3.00, avg degree 1.00"

    def test_degree_is_ratio_of_totals(self):
        ds = Dataset("m", (path_graph(2), star_graph(5)))
        st = dataset_stats(ds)
        assert st.avg_degree == pytest.approx(5 / 7)
        assert st.avg_nodes == 3.5


class TestBatch:
    def test_sizes_and_indicator(self):
        ds = Dataset("b", (cycle_graph(3), path_graph(4)))
        b = make_batch(ds, [0, 1])
        assert b.graph.num_nodes == 7
        assert list(b.graph_indicator) == [0, 0, 0, 1, 1, 1, 1]
        assert list(b.offsets) == [0, 3, 7]

    def test_single_graph_identical(self):
        g = star_graph(5)
        b = make_batch(Dataset("b", (g,)), [0])
        assert b.graph.edge_set() == g.edge_set()
        np.testing.assert_array_equal(b.graph.features, g.features)

    def test_empty_and_out_of_range(self):
        ds = Dataset("b", (cycle_graph(3),))
        with pytest.raises(DatasetError):
            make_batch(ds, [])
        with pytest.raises(DatasetError):
            make_batch(ds, [1])

    def test_split_recovers_members(self, small_dataset):
        idx = [5, 0, 3, 3, 11]
        b = make_batch(small_dataset, idx)
        for k, g in zip(idx, b.split()):
            assert g == small_dataset[k]
        owner = b.graph_indicator[b.graph.edges]
        assert np.all(owner[:, 0] == owner[:, 1])
        assert np.all(np.diff(b.graph_indicator) >= 0)

    def test_pooling_and_adjacency(self):
        b = batch_graphs([cycle_graph(3), path_graph(2)])
        adj = b.adjacency().toarray()
        assert np.array_equal(adj, adj.T)
        assert adj.sum() == 2 * (3 + 1)
        np.testing.assert_array_equal(b.pooling().toarray(), [[1, 1, 1, 0, 0], [0, 0, 0, 1, 1]])
