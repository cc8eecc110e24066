"""HMAX visual recognition pipeline.

Layers: Gabor filtering (S1), banded max pooling with optional
min-embedding (C1), prototype RBF matching (S2), global max (C2),
plus prototype learning (random / k-medoid), NN and linear SVM
classifiers, and an experiment harness with an S1 timing benchmark.
"""

from .imgproc import (CombineParams, adaptive_hist_eq, combine, combined_image,
                      load_grayscale, resize_height, svd_reconstruct)
from .gabor import (GaborBank, GaborFilter, SeparableGaborFilter,
                    band_of_scale, convolve_dense, convolve_separable,
                    make_bank, make_filter, make_separable)
from .layers import (C1Params, EmbedRule, EMBED_PRESETS, PipelineConfig,
                     c1_layer, c1_layer_embedded, c2_layer, extract_features,
                     rbf_response, s1_layer, s2_layer)
from .learning import (PamConfig, PamState, Prototype, PrototypeSet,
                       frobenius_distance, load_prototypes, pam_cluster,
                       pam_prototypes, sample_random_prototypes,
                       save_prototypes)
from .classify import (EvalReport, LabeledFeatures, NNModel, SVMModel,
                       evaluate, load_model, predict_nn, predict_svm,
                       save_model, train_linear_svm, train_nn)
from .harness import (Dataset, ExperimentConfig, RunReport, benchmark_s1,
                      ingest_dataset, load_config, run_experiment, split)
from .synthetic import generate_synthetic_dataset

__version__ = "0.1.0"
