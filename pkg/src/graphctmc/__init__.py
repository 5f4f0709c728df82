"""Discrete-state continuous-time diffusion for categorical graphs."""

from .graph import CategoricalGraph, SizeDistribution, canonical_key, fit_size_distribution, permute_graph
from .model import DenoiserModel, ModelConfig, predict_clean
from .noise import DiffusionSetup, NoiseSchedule, RateMatrixSpec, corrupt_graph, transition_matrix
from .sampler import SamplerConfig, generate
from .train import TrainConfig, load_checkpoint, save_checkpoint

__all__ = [
    "CategoricalGraph", "SizeDistribution", "canonical_key", "fit_size_distribution",
    "permute_graph", "DenoiserModel", "ModelConfig", "predict_clean", "DiffusionSetup",
    "NoiseSchedule", "RateMatrixSpec", "corrupt_graph", "transition_matrix", "SamplerConfig",
    "generate", "TrainConfig", "load_checkpoint", "save_checkpoint",
]
