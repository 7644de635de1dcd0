"""Sparsely labeled source domain adaptation.

A linear projection, soft source/target labels and class centroid maps are
optimized jointly so that the projected domains match in their marginal
and class-conditional means, classes form tight clusters and labels vary
smoothly on a kNN graph spanning both domains.

>>> from slsada import ShiftSpec, generate_synthetic_pair, sample_labeled_subset
>>> from slsada import SolverConfig, run_slsada
>>> pair = generate_synthetic_pair(ShiftSpec(rotation_deg=15, offset=1.0), seed=0)
>>> pair = pair.with_labeled(sample_labeled_subset(pair.original_y_source(), 5, seed=0))
>>> state, pred = run_slsada(pair, SolverConfig(k=2, lam=0.3, gamma=0.1))
>>> pred.target.shape
(150,)
"""

from .alignment import (MmdMatrix, build_all_mc, build_m0, build_mc, centroid_map,
                        conditional_mmd, conditional_mmd_centroid_form,
                        intra_class_scatter, marginal_mmd, projected_clustering_loss)
from .dataset import (DomainPair, FeatureFileError, ShiftSpec, center_pair,
                      generate_synthetic_pair, hard_labels, load_features, load_indices,
                      load_labels, one_hot, sample_labeled_subset, save_features,
                      save_indices, save_labels)
from .graph import (GraphLaplacian, PropagationError, SimilarityGraph, build_knn_graph,
                    build_laplacian, laplacian_energy, propagate_labels)
from .harness import (ExperimentSpec, RunReport, TraceWriter, accuracy_s, accuracy_t,
                      embed_dump, jda_like, propagation_only, run_protocol, source_only,
                      sweep, tca_like)
from .solver import (AdaptationState, NumericalError, Prediction, Projection,
                     SolverConfig, SolverError, run_slsada, solve_projection, update_fsu,
                     update_ft, update_gs, update_gt)

__version__ = "0.1.0"
