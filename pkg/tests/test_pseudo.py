import numpy as np
import numpy.testing as npt
import pytest

from arglt.graph import generate_sbm, make_split
from arglt.pseudo import (PseudoLabels, load_pseudo_labels, mlp_hidden_for,
                          save_pseudo_labels, select_pseudo_labels, train_mlp)


@pytest.fixture(scope="module")
def noiseless_case():
    g = generate_sbm(blocks=3, nodes_per_block=40, p_in=0.2, p_out=0.02,
                     feature_dim=6, feature_noise=0.0, seed=5)
    split = make_split(g, (0.1, 0.1, 0.8), seed=5)
    return g, split


class TestTrainMlp:
    def test_linearly_separable_reaches_high_train_accuracy(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=200, lr=1e-2, seed=0)
        from arglt.nn import mlp_forward
        probs, _ = mlp_forward(g.features, mlp)
        train_acc = (probs[split.train_idx].argmax(1) == g.labels[split.train_idx]).mean()
        assert train_acc >= 0.99

    def test_zero_epochs_returns_initial_weights(self, noiseless_case):
        g, split = noiseless_case
        a = train_mlp(g, split, epochs=0, seed=3)
        b = train_mlp(g, split, epochs=0, seed=3)
        npt.assert_array_equal(a.v0, b.v0)
        npt.assert_array_equal(a.v1, b.v1)

    def test_deterministic_per_seed(self, noiseless_case):
        g, split = noiseless_case
        a = train_mlp(g, split, epochs=30, seed=1)
        b = train_mlp(g, split, epochs=30, seed=1)
        npt.assert_array_equal(a.v0, b.v0)
        npt.assert_array_equal(a.v1, b.v1)

    def test_hidden_width_rule(self):
        assert mlp_hidden_for(1433) == 1024
        assert mlp_hidden_for(8) == 32


class TestSelectPseudoLabels:
    def test_zero_threshold_includes_every_test_node(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=50, seed=0)
        pl = select_pseudo_labels(mlp, g, split, threshold=0.0)
        assert set(pl.entries) == set(split.test_idx.tolist())

    def test_threshold_one_typically_empty(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=5, seed=0)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pl = select_pseudo_labels(mlp, g, split, threshold=1.0)
        for node, (label, conf) in pl.entries.items():
            assert conf == 1.0

    def test_inclusion_rule_and_confidence(self):
        # direct evaluation: probabilities (0.85, 0.15) at tau=0.8
        from arglt.graph import Graph, NodeSplit
        from arglt.nn import MlpState
        logit = np.log(0.85 / 0.15)
        mlp = MlpState(v0=np.array([[1.0]]), v1=np.array([[logit, 0.0]]))
        g = Graph(n_nodes=2, edges=[[0, 1]], features=np.array([[1.0], [1.0]]),
                  labels=np.array([0, 0]), num_classes=2)
        split = NodeSplit(train_idx=[0], val_idx=[], test_idx=[1])
        pl = select_pseudo_labels(mlp, g, split, threshold=0.8)
        label, conf = pl.entries[1]
        assert label == 0
        assert conf == pytest.approx(0.85, abs=1e-12)

    def test_monotone_in_threshold(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=100, seed=2)
        sets = [set(select_pseudo_labels(mlp, g, split, t).entries)
                for t in (0.5, 0.8, 0.95)]
        assert sets[2] <= sets[1] <= sets[0]

    def test_never_intersects_train_or_val(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=50, seed=2)
        pl = select_pseudo_labels(mlp, g, split, threshold=0.0)
        banned = set(split.train_idx.tolist()) | set(split.val_idx.tolist())
        assert not (set(pl.entries) & banned)

    def test_noiseless_sbm_pseudo_labels_perfect(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=200, seed=0)
        pl = select_pseudo_labels(mlp, g, split, threshold=0.8)
        assert len(pl) > 0
        for node, (label, _conf) in pl.entries.items():
            assert label == g.labels[node]

    def test_entries_within_class_range(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=20, seed=4)
        pl = select_pseudo_labels(mlp, g, split, threshold=0.0)
        for _, (label, conf) in pl.entries.items():
            assert 0 <= label < g.num_classes
            assert 0.0 <= conf <= 1.0

    def test_invalid_threshold(self, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=1, seed=0)
        with pytest.raises(ValueError):
            select_pseudo_labels(mlp, g, split, threshold=1.5)


class TestPseudoLabelIO:
    def test_json_roundtrip(self, tmp_path, noiseless_case):
        g, split = noiseless_case
        mlp = train_mlp(g, split, epochs=50, seed=0)
        pl = select_pseudo_labels(mlp, g, split, threshold=0.8)
        save_pseudo_labels(tmp_path / "pl.json", pl)
        loaded = load_pseudo_labels(tmp_path / "pl.json", threshold=0.8)
        assert loaded.entries == pl.entries
        npt.assert_array_equal(loaded.node_ids, pl.node_ids)

    def test_sorted_arrays_align_with_entries(self):
        pl = PseudoLabels(entries={5: (1, 0.9), 2: (0, 0.85)}, threshold=0.5)
        npt.assert_array_equal(pl.node_ids, [2, 5])
        npt.assert_array_equal(pl.label_array, [0, 1])
