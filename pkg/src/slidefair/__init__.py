"""Fairness-constrained binary classification with bounded surrogate constraints."""
from .constraints import ConstraintSpec, ScoredBatch, constraint_value, mc_population_constraint
from .data import ContinuousScaler, Dataset, SplitSpec, load_csv, split, synth
from .estimator import FairClassifier
from .evaluation import FairnessReport, consistency, evaluate, mnf_diagnostic, pareto_sweep
from .nn_core import ModelParams, init_params, load_model, save_model
from .surrogates import SurrogateSpec
from .trainer import TrainConfig, TrainResult, select_model, train_cccp, train_hyslide, train_penalized

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec", "ScoredBatch", "constraint_value", "mc_population_constraint",
    "ContinuousScaler", "Dataset", "SplitSpec", "load_csv", "split", "synth",
    "FairClassifier", "FairnessReport", "consistency", "evaluate", "mnf_diagnostic", "pareto_sweep",
    "ModelParams", "init_params", "load_model", "save_model", "SurrogateSpec",
    "TrainConfig", "TrainResult", "select_model", "train_cccp", "train_hyslide", "train_penalized",
]
