"""Mask-based automated feature engineering trained end-to-end on the task loss."""
from .data import Column, Dataset, Schema, load_csv, split, synthesize
from .errors import AutomanError, DataError, NumericError, ShapeError
from .gaussian_approx import GaussianSum, fit_gaussian_sum, uniform_error, verify_algebra
from .pipeline import PipelineModel, RawMLP
from .trainer import TrainConfig, TrainReport, evaluate, export_features, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AutomanError",
    "Column",
    "DataError",
    "Dataset",
    "GaussianSum",
    "NumericError",
    "PipelineModel",
    "RawMLP",
    "Schema",
    "ShapeError",
    "TrainConfig",
    "TrainReport",
    "evaluate",
    "export_features",
    "fit_gaussian_sum",
    "load_checkpoint",
    "load_csv",
    "save_checkpoint",
    "split",
    "synthesize",
    "train",
    "uniform_error",
    "verify_algebra",
]
