"""Soft Transfer Network: heterogeneous domain adaptation with soft-label MMD."""

from .data import CsvSchema, HdaDataset, SynthSpec, gen_synthetic, load_csv, stratified_sample, write_csv
from .errors import StnError
from .evalkit import SuiteReport, TrialReport, accuracy, export_embeddings, run_ablations, run_trials
from .model import ModelConfig, StnParams, init_params, load_checkpoint, save_checkpoint
from .trainer import VARIANTS, TrainConfig, TrainTrace, predict, train

__version__ = "0.1.0"

__all__ = [
    "CsvSchema", "HdaDataset", "SynthSpec", "gen_synthetic", "load_csv", "stratified_sample",
    "write_csv", "StnError", "SuiteReport", "TrialReport", "accuracy", "export_embeddings",
    "run_ablations", "run_trials", "ModelConfig", "StnParams", "init_params", "load_checkpoint",
    "save_checkpoint", "VARIANTS", "TrainConfig", "TrainTrace", "predict", "train",
]
