"""Instance-dependent label noise: modeling, estimation, and correction.

Models the label corruption of each instance with a transition matrix
that is a convex combination of a small set of part-level matrices,
estimates those matrices from anchor points and a parts-based
factorization of the features, and trains classifiers on corrected
risks built from the estimated matrices.
"""
from .anchors import estimate_anchor_rows, select_anchors
from .classifier import TrainConfig, evaluate, predict_posterior, train
from .dataio import Dataset, SplitSpec, load_bundle, save_bundle, split_train_val
from .errors import ConfigError, ConvergenceError, DataError, PartnoiseError
from .harness import (
    ExperimentConfig,
    approximation_sweep,
    config_from_dict,
    run_pipeline,
)
from .noisegen import NoiseGenConfig, corrupt_dataset
from .parts import fit_parts, infer_coefficients_batch
from .simplexopt import ProjGradConfig, project_simplex
from .stats import ttest_two_sample
from .transition import combine, combine_batch, fit_part_matrices, revise

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "ExperimentConfig",
    "NoiseGenConfig",
    "PartnoiseError",
    "ProjGradConfig",
    "SplitSpec",
    "TrainConfig",
    "approximation_sweep",
    "combine",
    "combine_batch",
    "config_from_dict",
    "corrupt_dataset",
    "estimate_anchor_rows",
    "evaluate",
    "fit_part_matrices",
    "fit_parts",
    "infer_coefficients_batch",
    "load_bundle",
    "predict_posterior",
    "project_simplex",
    "run_pipeline",
    "save_bundle",
    "select_anchors",
    "split_train_val",
    "train",
    "ttest_two_sample",
    "__version__",
]
