"""Adversarially robust graph lottery tickets.

Joint pruning of graph edges and GCN weights on structure-poisoned
graphs: a poisoning adversary perturbs the adjacency within a budget, a
feature-only MLP supplies confident pseudo labels for test nodes, and an
iterative mask optimizer prunes edges and weights while steering removal
toward adversarial (feature-dissimilar) edges. The surviving sparse
(graph, sub-network) pair retrains from its original initialization.
"""

from .attacks import (AttackConfig, EdgeCategoryCounts, FeatureDiffHistogram,
                      PerturbedGraph, SurrogateConfig, dissimilar_edge_attack,
                      edge_category_counts, feature_diff_histogram, load_attack,
                      pgd_structure_attack, random_flip_attack, save_attack)
from .graph import (Graph, NodeSplit, NormalizedAdjacency, generate_sbm,
                    graph_sparsity, largest_connected_component, load_graph,
                    load_split, make_split, model_sparsity,
                    normalized_adjacency, write_dataset)
from .losses import (LossBreakdown, LossWeights, args_total, ce_pseudo,
                     ce_train, edge_feature_sqdiff, feature_smoothness,
                     retrain_loss)
from .nn import (AdamState, GcnState, MaskPair, MlpState, adam_step,
                 gcn_backward, gcn_forward, init_weights, load_checkpoint,
                 mlp_forward, save_checkpoint)
from .pseudo import (PseudoLabels, load_pseudo_labels, save_pseudo_labels,
                     select_pseudo_labels, train_mlp)
from .sparsify import (ArgsConfig, ArgsResult, RoundRecord, TicketReport,
                       args_loss_and_grads, evaluate, load_ticket, prune_masks,
                       retrain_ticket, rewind, run_ablation, run_args,
                       save_ticket, simulate_prune_schedule)

__version__ = "0.1.0"
