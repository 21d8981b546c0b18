import numpy as np
import pytest

from arglt.attacks import PerturbedGraph
from arglt.graph import Graph, NodeSplit, generate_sbm, make_split
from arglt.losses import LossWeights
from arglt.nn import GcnState, MaskPair
from arglt.pseudo import PseudoLabels


@pytest.fixture
def tiny_graph():
    """4-node path with separable 1-d features."""
    return Graph(
        n_nodes=4,
        edges=[[0, 1], [1, 2], [2, 3]],
        features=np.array([[0.0], [0.2], [0.8], [1.0]]),
        labels=np.array([0, 0, 1, 1]),
        num_classes=2,
    )


@pytest.fixture
def sbm_graph():
    return generate_sbm(blocks=2, nodes_per_block=50, p_in=0.2, p_out=0.02,
                        feature_dim=8, feature_noise=0.3, seed=7)


@pytest.fixture
def sbm_split(sbm_graph):
    return make_split(sbm_graph, (0.1, 0.1, 0.8), seed=7)


def random_instance(seed, max_nodes=20, max_features=6, max_hidden=8,
                    max_classes=4, with_pseudo=True):
    """Small random masked-GCN problem for gradient and property checks."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, max_nodes + 1))
    num_f = int(rng.integers(2, max_features + 1))
    hidden = int(rng.integers(2, max_hidden + 1))
    num_c = int(rng.integers(2, max_classes + 1))
    iu, ju = np.triu_indices(n, 1)
    pick = rng.random(iu.size) < 0.3
    if not pick.any():
        pick[0] = True
    edges = np.stack([iu[pick], ju[pick]], 1).astype(np.int64)
    labels = rng.integers(0, num_c, n).astype(np.int64)
    labels[:num_c] = np.arange(num_c)
    g = Graph(n_nodes=n, edges=edges, features=rng.standard_normal((n, num_f)),
              labels=labels, num_classes=num_c)
    perm = rng.permutation(n)
    k = max(2, n // 3)
    split = NodeSplit(train_idx=perm[:k], val_idx=perm[k:k + 2],
                      test_idx=perm[k + 2:])
    pg = PerturbedGraph.unperturbed(g)
    gcn = GcnState.create(num_f, hidden, num_c, int(rng.integers(0, 2**31)))
    masks = MaskPair.ones(edges.shape[0], [gcn.w0.shape, gcn.w1.shape])
    masks.edge_mask = rng.uniform(0.1, 1.0, edges.shape[0])
    masks.weight_masks = [rng.uniform(0.1, 1.0, gcn.w0.shape),
                          rng.uniform(0.1, 1.0, gcn.w1.shape)]
    if with_pseudo and split.test_idx.size:
        entries = {int(v): (int(rng.integers(0, num_c)), 1.0)
                   for v in split.test_idx[:3]}
        pseudo = PseudoLabels(entries=entries, threshold=0.0)
    else:
        pseudo = PseudoLabels.empty()
    weights = LossWeights(alpha=1.0, beta=0.1, gamma=1.0, eta=1.0, zeta=1.0,
                          lambda1=1e-2, lambda2=1e-2)
    return pg, split, pseudo, gcn, masks, weights


def central_difference(f, step=1e-5):
    """Central finite difference of a scalar function of one coordinate."""
    return (f(step) - f(-step)) / (2.0 * step)
