"""Multi-task deep Gaussian processes with shared and task-specific latent units."""

from .architecture import RECIPES, InitRecipe, KernelInit, Model, ModelSpec, ard_report, build_model, propagate
from .data import CsvSchema, Standardizer, TaskDataset, fit_standardizer, generate_toy, load_csv, sarcos_split
from .estimator import MultiTaskDGPClassifier, MultiTaskDGPRegressor
from .evaluation import PredictiveMixture, nlpp, predict, rmse, roc_auc
from .objective import KLWeights, MonteCarloConfig, elbo, minibatch_elbo
from .rng import RngStream
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "RECIPES",
    "CsvSchema",
    "InitRecipe",
    "KLWeights",
    "KernelInit",
    "Model",
    "ModelSpec",
    "MonteCarloConfig",
    "MultiTaskDGPClassifier",
    "MultiTaskDGPRegressor",
    "PredictiveMixture",
    "RngStream",
    "Standardizer",
    "TaskDataset",
    "TrainConfig",
    "ard_report",
    "build_model",
    "elbo",
    "fit_standardizer",
    "generate_toy",
    "load_checkpoint",
    "load_csv",
    "minibatch_elbo",
    "nlpp",
    "predict",
    "propagate",
    "rmse",
    "roc_auc",
    "sarcos_split",
    "save_checkpoint",
    "train",
]
