"""Friction estimation from the latent space of a hierarchical conditional VAE."""
from .baseline import EndToEndFrictionRegressor
from .cvae import HierarchicalCVAESegmenter
from .friction import LatentFrictionRegressor, extract_latent_feature, surface_onehot
from .ground_truth import build_dataset, compute_mu, compute_mu_max, synchronize
from .metrics import compare_models, mean_iou, rmse, sample_diversity
from .synthetic import SceneSpec, generate_scene

__version__ = "0.1.0"

__all__ = [
    "EndToEndFrictionRegressor",
    "HierarchicalCVAESegmenter",
    "LatentFrictionRegressor",
    "SceneSpec",
    "build_dataset",
    "compare_models",
    "compute_mu",
    "compute_mu_max",
    "extract_latent_feature",
    "generate_scene",
    "mean_iou",
    "rmse",
    "sample_diversity",
    "surface_onehot",
    "synchronize",
]
