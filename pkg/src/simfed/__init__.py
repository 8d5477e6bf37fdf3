"""Federated-learning ensemble simulator with a closed-form kernel oracle.

The package trains an ensemble of K server-side modes over Q client strata
with a fresh random mode-to-stratum permutation each age, next to FedAvg
and FedProx baselines, on two desk-scale tasks: a noisy sine regression
with a linear RBF-feature model (which admits an exact Gaussian-process
description of the trained ensemble) and a synthetic Gaussian-cluster
classification problem with a small MLP.

Entry points: :func:`run_training` for one job, :mod:`simfed.presets` for
the published-table experiments, and the ``simfed`` CLI for both.
"""

from .errors import (SimfedError, ConfigError, ContractError, DivergenceError,
                     ProtocolError, NumericalError, DegeneratePlaneError,
                     FitError, SchemaError, UnsupportedOperationError)
from .seeds import stream, stream_seed
from .data import (ClientDataset, FederatedDataset, LabeledPool, gen_toy_sine,
                   toy_sine_truth, gen_synthetic_classification, split_pool,
                   partition_iid, partition_by_label, save_dataset_csv,
                   load_dataset_csv)
from .models import (RbfFeatureModel, MlpModel, InitSpec, init_weights,
                     predict, predict_proba, softmax, loss, loss_and_grad,
                     local_training, save_weights, load_weights)
from .federation import (ALGORITHMS, Strata, build_strata, PermutationSchedule,
                         new_schedule, Ensemble, RoundPlan, plan_round,
                         ClientUpdate, ClientEvent, RunRecord, LocalHyper,
                         server_update, run_round, run_training, TrainingRun)
from .kernels import (GramMatrix, gram, kernel_cross, GpPosterior, gp_posterior,
                      VarianceScaling, variance_ratio_check, DecayFit, fit_decay)
from .analysis import (ensemble_predict, ensemble_classify, BiasVarianceReport,
                       bias_variance, ModeStats, mode_stats, SurfaceGrid,
                       loss_surface_projection, n_threads)
from .config import (RunConfig, DatasetSpec, PartitionSpec, ModelSpec, LrDecay,
                     parse_config, config_from_dict, build_dataset, build_model)
from .metrics import (write_metrics, read_metrics, records_equivalent,
                      RunManifest, file_sha256)
from .presets import PRESET_NAMES, PresetReport, run_preset

__version__ = "0.1.0"

__all__ = [
    "SimfedError", "ConfigError", "ContractError", "DivergenceError",
    "ProtocolError", "NumericalError", "DegeneratePlaneError", "FitError",
    "SchemaError", "UnsupportedOperationError",
    "stream", "stream_seed",
    "ClientDataset", "FederatedDataset", "LabeledPool", "gen_toy_sine",
    "toy_sine_truth", "gen_synthetic_classification", "split_pool",
    "partition_iid", "partition_by_label", "save_dataset_csv",
    "load_dataset_csv",
    "RbfFeatureModel", "MlpModel", "InitSpec", "init_weights", "predict",
    "predict_proba", "softmax", "loss", "loss_and_grad", "local_training",
    "save_weights", "load_weights",
    "ALGORITHMS", "Strata", "build_strata", "PermutationSchedule",
    "new_schedule", "Ensemble", "RoundPlan", "plan_round", "ClientUpdate",
    "ClientEvent", "RunRecord", "LocalHyper", "server_update", "run_round",
    "run_training", "TrainingRun",
    "GramMatrix", "gram", "kernel_cross", "GpPosterior", "gp_posterior",
    "VarianceScaling", "variance_ratio_check", "DecayFit", "fit_decay",
    "ensemble_predict", "ensemble_classify", "BiasVarianceReport",
    "bias_variance", "ModeStats", "mode_stats", "SurfaceGrid",
    "loss_surface_projection", "n_threads",
    "RunConfig", "DatasetSpec", "PartitionSpec", "ModelSpec", "LrDecay",
    "parse_config", "config_from_dict", "build_dataset", "build_model",
    "write_metrics", "read_metrics", "records_equivalent", "RunManifest",
    "file_sha256",
    "PRESET_NAMES", "PresetReport", "run_preset",
    "__version__",
]
