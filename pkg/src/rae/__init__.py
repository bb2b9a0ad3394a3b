"""Regularized autoencoders, VAE baselines and ex-post latent density estimation."""

from .density import GaussianDensity, GaussianMixture, IsotropicPrior, SecondStageVAE
from .estimator import Autoencoder
from .metrics import FeatureExtractor, frechet, nearest_neighbors, slerp
from .models import AutoencoderNet, LossBreakdown, ModelSpec
from .regularizers import RegularizerConfig

__all__ = [
    "Autoencoder",
    "AutoencoderNet",
    "FeatureExtractor",
    "GaussianDensity",
    "GaussianMixture",
    "IsotropicPrior",
    "LossBreakdown",
    "ModelSpec",
    "RegularizerConfig",
    "SecondStageVAE",
    "frechet",
    "nearest_neighbors",
    "slerp",
]

__version__ = "0.1.0"
