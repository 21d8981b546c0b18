import numpy as np
import numpy.testing as npt
import pytest

from arglt.graph import (Graph, NodeSplit, NormalizedAdjacency, generate_sbm,
                         graph_sparsity, largest_connected_component,
                         load_graph, load_split, make_split, model_sparsity,
                         normalized_adjacency, write_dataset)


def write_min_dataset(d, edges="0 1\n", features="1.0,0.0\n0.0,1.0\n",
                      labels="0\n1\n"):
    (d / "edges.txt").write_text(edges)
    (d / "features.csv").write_text(features)
    (d / "labels.txt").write_text(labels)


class TestLoadGraph:
    def test_minimal_dataset(self, tmp_path):
        write_min_dataset(tmp_path)
        g = load_graph(tmp_path)
        assert (g.n_nodes, g.num_edges, g.num_features, g.num_classes) == (2, 1, 2, 2)

    def test_reversed_duplicate_edges_collapse(self, tmp_path):
        write_min_dataset(tmp_path, edges="0 1\n1 0\n0 1\n")
        g = load_graph(tmp_path)
        assert g.num_edges == 1
        npt.assert_array_equal(g.edges, [[0, 1]])

    def test_self_loop_rejected(self, tmp_path):
        write_min_dataset(tmp_path, edges="0 0\n")
        with pytest.raises(ValueError, match="self-loop"):
            load_graph(tmp_path)

    def test_missing_file(self, tmp_path):
        (tmp_path / "edges.txt").write_text("0 1\n")
        with pytest.raises(FileNotFoundError):
            load_graph(tmp_path)

    def test_edge_endpoint_out_of_range(self, tmp_path):
        write_min_dataset(tmp_path, edges="0 5\n")
        with pytest.raises(ValueError, match="out of range"):
            load_graph(tmp_path)

    def test_feature_label_length_mismatch(self, tmp_path):
        write_min_dataset(tmp_path, labels="0\n1\n0\n")
        with pytest.raises(ValueError):
            load_graph(tmp_path)

    def test_negative_label_rejected(self, tmp_path):
        write_min_dataset(tmp_path, labels="0\n-1\n")
        with pytest.raises(ValueError, match="label"):
            load_graph(tmp_path)

    def test_roundtrip_through_write_dataset(self, tmp_path, sbm_graph):
        write_dataset(tmp_path / "ds", sbm_graph)
        g = load_graph(tmp_path / "ds")
        npt.assert_array_equal(g.edges, sbm_graph.edges)
        npt.assert_allclose(g.features, sbm_graph.features, atol=1e-9)
        npt.assert_array_equal(g.labels, sbm_graph.labels)

    def test_split_json_roundtrip(self, tmp_path, sbm_graph, sbm_split):
        write_dataset(tmp_path / "ds", sbm_graph, sbm_split)
        loaded = load_split(tmp_path / "ds", sbm_graph.n_nodes)
        npt.assert_array_equal(loaded.train_idx, sbm_split.train_idx)
        npt.assert_array_equal(loaded.test_idx, sbm_split.test_idx)
        assert load_split(tmp_path, 5) is None


class TestLargestConnectedComponent:
    def triangle_plus(self, extra_edges, n):
        return Graph(n_nodes=n, edges=[[0, 1], [0, 2], [1, 2]] + extra_edges,
                     features=np.zeros((n, 1)), labels=np.zeros(n, np.int64),
                     num_classes=1)

    def test_connected_graph_unchanged(self):
        g = self.triangle_plus([], 3)
        sub, index_map = largest_connected_component(g)
        npt.assert_array_equal(sub.edges, g.edges)
        assert index_map == {0: 0, 1: 1, 2: 2}

    def test_larger_component_wins(self):
        g = self.triangle_plus([[3, 4]], 5)
        sub, index_map = largest_connected_component(g)
        assert sub.n_nodes == 3 and sub.num_edges == 3
        assert set(index_map) == {0, 1, 2}

    def test_tie_break_smallest_min_node_id(self):
        g = Graph(n_nodes=4, edges=[[0, 1], [2, 3]], features=np.zeros((4, 1)),
                  labels=np.zeros(4, np.int64), num_classes=1)
        sub, index_map = largest_connected_component(g)
        assert set(index_map) == {0, 1}

    def test_idempotent(self, sbm_graph):
        once, _ = largest_connected_component(sbm_graph)
        twice, index_map = largest_connected_component(once)
        npt.assert_array_equal(once.edges, twice.edges)
        assert index_map == {i: i for i in range(once.n_nodes)}

    def test_edgeless_graph_yields_single_node(self):
        g = Graph(n_nodes=3, edges=np.empty((0, 2), np.int64),
                  features=np.zeros((3, 1)), labels=np.zeros(3, np.int64),
                  num_classes=1)
        sub, index_map = largest_connected_component(g)
        assert sub.n_nodes == 1 and sub.num_edges == 0
        assert index_map == {0: 0}


class TestMakeSplit:
    def test_floor_sizes_small(self, tiny_graph):
        g = generate_sbm(2, 5, 0.5, 0.1, 2, 0.0, seed=0)
        split = make_split(g, (0.1, 0.1, 0.8), seed=7)
        assert (split.train_idx.size, split.val_idx.size, split.test_idx.size) == (1, 1, 8)

    def test_cora_sized_floor_and_remainder(self):
        g = generate_sbm(5, 497, 0.01, 0.0001, 5, 0.0, seed=0)
        assert g.n_nodes == 2485
        split = make_split(g, (0.1, 0.1, 0.8), seed=0)
        assert (split.train_idx.size, split.val_idx.size, split.test_idx.size) == (248, 248, 1989)

    def test_deterministic_per_seed(self, sbm_graph):
        a = make_split(sbm_graph, (0.1, 0.1, 0.8), seed=3)
        b = make_split(sbm_graph, (0.1, 0.1, 0.8), seed=3)
        npt.assert_array_equal(a.train_idx, b.train_idx)
        npt.assert_array_equal(a.val_idx, b.val_idx)
        npt.assert_array_equal(a.test_idx, b.test_idx)

    def test_different_seeds_differ(self, sbm_graph):
        a = make_split(sbm_graph, (0.1, 0.1, 0.8), seed=3)
        b = make_split(sbm_graph, (0.1, 0.1, 0.8), seed=4)
        assert not np.array_equal(a.train_idx, b.train_idx)

    def test_zero_train_nodes_rejected(self, tiny_graph):
        with pytest.raises(ValueError, match="zero nodes"):
            make_split(tiny_graph, (0.0, 0.5, 0.5), seed=0)

    def test_split_disjointness_enforced(self):
        with pytest.raises(ValueError, match="disjoint"):
            NodeSplit(train_idx=[0, 1], val_idx=[1], test_idx=[2])


class TestGenerateSbm:
    def test_zero_inter_probability(self):
        g = generate_sbm(2, 30, 0.3, 0.0, 4, 0.1, seed=1)
        same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
        assert same.all()

    def test_intra_edge_count_within_3_sigma(self):
        g = generate_sbm(2, 50, 0.2, 0.01, 4, 0.0, seed=1)
        intra = (g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]).sum()
        trials = 2 * (50 * 49 // 2)
        expected = trials * 0.2
        sigma = np.sqrt(trials * 0.2 * 0.8)
        assert abs(intra - expected) <= 3 * sigma

    def test_noiseless_features_identical_within_block(self):
        g = generate_sbm(3, 10, 0.5, 0.1, 6, 0.0, seed=2)
        for b in range(3):
            rows = g.features[g.labels == b]
            npt.assert_array_equal(rows, np.tile(rows[0], (rows.shape[0], 1)))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            generate_sbm(1, 10, 0.5, 0.1, 4, 0.0, seed=0)
        with pytest.raises(ValueError):
            generate_sbm(2, 10, 0.1, 0.5, 4, 0.0, seed=0)
        with pytest.raises(ValueError):
            generate_sbm(4, 10, 0.5, 0.1, 2, 0.0, seed=0)


class TestNormalizedAdjacency:
    def test_single_node_identity(self):
        adj = normalized_adjacency(1, np.empty((0, 2), np.int64), np.empty(0))
        npt.assert_array_equal(adj.to_dense(), [[1.0]])

    def test_two_nodes_full_mask(self):
        adj = normalized_adjacency(2, [[0, 1]], [1.0])
        npt.assert_allclose(adj.to_dense(), [[0.5, 0.5], [0.5, 0.5]])

    def test_two_nodes_half_mask(self):
        adj = normalized_adjacency(2, [[0, 1]], [0.5])
        npt.assert_allclose(adj.to_dense(), [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])

    def test_zero_mask_gives_identity_exactly(self, sbm_graph):
        adj = normalized_adjacency(sbm_graph.n_nodes, sbm_graph.edges,
                                   np.zeros(sbm_graph.num_edges))
        npt.assert_array_equal(adj.to_dense(), np.eye(sbm_graph.n_nodes))

    def test_symmetry_is_exact(self, sbm_graph):
        rng = np.random.default_rng(0)
        mask = rng.uniform(0.1, 1.0, sbm_graph.num_edges)
        dense = normalized_adjacency(sbm_graph.n_nodes, sbm_graph.edges, mask).to_dense()
        assert np.max(np.abs(dense - dense.T)) == 0.0

    def test_degree_collapse_raises(self):
        with pytest.raises(ValueError, match="degree"):
            normalized_adjacency(2, [[0, 1]], [-1.0])

    def test_matmul_matches_dense(self, sbm_graph):
        rng = np.random.default_rng(1)
        mask = rng.uniform(0.0, 1.0, sbm_graph.num_edges)
        adj = normalized_adjacency(sbm_graph.n_nodes, sbm_graph.edges, mask)
        m = rng.standard_normal((sbm_graph.n_nodes, 3))
        npt.assert_allclose(adj.matmul(m), adj.to_dense() @ m, atol=1e-12)


class TestSparsityAccounting:
    def test_fresh_masks(self):
        assert graph_sparsity(np.ones(10)) == 0.0
        assert model_sparsity([np.ones((3, 4)), np.ones((4, 2))]) == 0.0

    def test_five_rounds_of_five_percent_on_cora_sized_count(self):
        m = np.ones(5069)
        alive = 5069
        for _ in range(5):
            k = int(np.floor(0.05 * alive))
            m[np.flatnonzero(m)[:k]] = 0.0
            alive -= k
        assert abs(graph_sparsity(m) - (1 - 0.95 ** 5)) < 2e-3
        assert abs(graph_sparsity(m) - 0.227) < 2e-3

    def test_eighteen_rounds_of_twenty_percent(self):
        total = 737280  # Cora-sized weight count: 1433*512 + 512*7
        alive = total
        for _ in range(18):
            alive -= int(np.floor(0.20 * alive))
        assert abs((1 - alive / total) - 0.982) < 2e-3
