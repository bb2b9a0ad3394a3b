"""scikit-learn style wrapper around :mod:`rae.models`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import models
from ._validation import check_images
from .models import AutoencoderNet, ModelSpec
from .regularizers import RegularizerConfig
from .seeding import stream

__all__ = ["Autoencoder"]


class Autoencoder(BaseEstimator, TransformerMixin):
    """AE, RAE, VAE or CV-VAE trained with Adam.

    ``transform`` returns encoder means (the latent codes used for ex-post
    density estimation) and ``inverse_transform`` decodes codes back to
    flattened images in the input item shape.

    Parameters
    ----------
    kind : {"AE", "RAE", "VAE", "CVVAE"}
    beta : float or None
        Latent-term weight. ``None`` picks 1e-3 for RAE/CVVAE, 1 for VAE, 0 for AE.
    l2, gp : float
        Decoder weight-decay and gradient-penalty weights (0 disables).
    sn : bool
        Spectral normalization of decoder matrices.
    seed : int
        Drives initialization, shuffling and noise through separate streams.
    """

    def __init__(self, kind: str = "RAE", latent_dim: int = 16,
                 hidden: tuple[int, ...] = (1024, 512), activation: str = "relu",
                 output_activation: str = "sigmoid", beta: float | None = None,
                 l2: float = 0.0, gp: float = 0.0, sn: bool = False, gp_step: float = 1e-2,
                 sn_iters: int = 1, sigma_cv: float = 1.0, k_mc: int = 1, lr: float = 1e-3,
                 epochs: int = 100, batch_size: int = 100, patience: int = 3,
                 seed: int = 0, dtype: str = "float32"):
        self.kind = kind
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.activation = activation
        self.output_activation = output_activation
        self.beta = beta
        self.l2 = l2
        self.gp = gp
        self.sn = sn
        self.gp_step = gp_step
        self.sn_iters = sn_iters
        self.sigma_cv = sigma_cv
        self.k_mc = k_mc
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        self.dtype = dtype

    def _spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(
            self.kind, input_dim=input_dim, latent_dim=self.latent_dim,
            hidden=tuple(self.hidden), activation=self.activation,
            output_activation=self.output_activation, beta=self.beta,
            sigma_cv=self.sigma_cv, k_mc=self.k_mc,
            reg=RegularizerConfig(self.l2, self.gp, bool(self.sn), self.gp_step, self.sn_iters))

    def _streams(self):
        return tuple(stream(self.seed, name) for name in ("init", "shuffle", "noise"))

    def init_network(self, item_shape: tuple[int, ...], rng=None) -> "Autoencoder":
        """Build freshly initialized (untrained) parameters for ``item_shape`` inputs."""
        init_rng = rng if rng is not None else self._streams()[0]
        self.item_shape_ = tuple(item_shape)
        self.net_ = AutoencoderNet(self._spec(int(np.prod(item_shape))), init_rng,
                                   dtype=np.dtype(self.dtype))
        self.history_ = []
        self.epoch_ = 0
        return self

    def fit(self, X, y=None, X_val=None, callback=None, rngs=None):
        """Train on ``X``; ``X_val`` drives the plateau schedule and best-epoch pick.

        ``rngs`` optionally supplies (init, shuffle, noise) generators.
        """
        X, item_shape = check_images(X, self.dtype)
        if X_val is not None:
            X_val, val_shape = check_images(X_val, self.dtype)
            if val_shape != item_shape:
                raise ValueError("validation images differ in shape from training images")
        init_rng, shuffle_rng, noise_rng = rngs if rngs is not None else self._streams()
        self.init_network(item_shape, init_rng)
        self.history_ = models.train(
            self.net_, X, X_val, epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
            patience=self.patience, shuffle_rng=shuffle_rng, noise_rng=noise_rng,
            callback=callback)
        self.epoch_ = len(self.history_)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X, shape = check_images(X, self.dtype)
        if int(np.prod(shape)) != self.net_.spec.input_dim:
            raise ValueError(f"expected inputs of shape {self.item_shape_}, got {shape}")
        return models.latents(self.net_, X)

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "net_")
        Z = np.asarray(Z, dtype=self.net_.dtype).reshape(-1, self.net_.spec.latent_dim)
        out = models.decode_array(self.net_, Z)
        return out.reshape(len(Z), *self.item_shape_)

    def reconstruct(self, X) -> np.ndarray:
        return self.inverse_transform(self.transform(X))

    def loss_breakdown(self, X, rng=None) -> models.LossBreakdown:
        check_is_fitted(self, "net_")
        X, _ = check_images(X, self.dtype)
        return models.loss(self.net_, X, rng if rng is not None else np.random.default_rng(0))

    def score(self, X, y=None) -> float:
        """Negative mean squared reconstruction error (summed over pixels)."""
        X, _ = check_images(X, np.float64)
        R = self.reconstruct(X).reshape(len(X), -1).astype(np.float64)
        return -float(np.mean(np.sum((R - X) ** 2, axis=1)))
