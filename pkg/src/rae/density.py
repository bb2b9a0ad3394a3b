"""Ex-post density estimators over latent codes.

All estimators follow the same small API: ``fit(Z)``, ``sample(n, rng)``,
``score_samples(Z)`` (per-row log-density) and ``score(Z)`` (mean).
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_latents

__all__ = [
    "GmmCollapseError",
    "IsotropicPrior",
    "GaussianDensity",
    "GaussianMixture",
    "SecondStageVAE",
    "fit_gaussian",
    "fit_gmm",
    "sample",
    "log_likelihood",
    "make_density",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2 * math.pi)


class GmmCollapseError(RuntimeError):
    """A mixture component kept collapsing after the allowed reseeds."""


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _canonical(Z: np.ndarray) -> np.ndarray:
    """Rows in lexicographic order, so fits do not depend on input order."""
    return Z[np.lexsort(Z.T[::-1])]


def _weighted_moments(Z: np.ndarray, w: np.ndarray, ridge: float):
    """Weighted MLE mean and covariance plus a trace-relative ridge."""
    total = w.sum()
    mean = (w @ Z) / total
    diff = Z - mean
    cov = (diff * w[:, None]).T @ diff / total
    cov = 0.5 * (cov + cov.T)
    d = Z.shape[1]
    scale = np.trace(cov) / d
    if not scale > 0:
        scale = 1.0
    cov[np.diag_indices(d)] += ridge * scale
    return mean, cov


def _gauss_logpdf(Z: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = Z.shape[1]
    sol = solve_triangular(chol, (Z - mean).T, lower=True)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG_2PI + logdet + maha)


def _chol(cov: np.ndarray) -> np.ndarray:
    return cholesky(cov, lower=True)


class IsotropicPrior(BaseEstimator):
    """The fixed N(0, I) prior. ``fit`` only records the dimension."""

    def __init__(self, latent_dim: int | None = None):
        self.latent_dim = latent_dim

    def fit(self, Z, y=None):
        if Z is not None:
            Z = check_latents(Z)
            self.dim_ = Z.shape[1]
        elif self.latent_dim is not None:
            self.dim_ = int(self.latent_dim)
        else:
            raise ValueError("need latents or latent_dim")
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        check_is_fitted(self, "dim_")
        return rng.standard_normal((n, self.dim_))

    def score_samples(self, Z) -> np.ndarray:
        check_is_fitted(self, "dim_")
        Z = check_latents(Z, allow_single=True)
        return -0.5 * (self.dim_ * _LOG_2PI + np.sum(Z * Z, axis=1))

    def score(self, Z, y=None) -> float:
        return float(np.mean(self.score_samples(Z)))


class GaussianDensity(BaseEstimator):
    """Full-covariance Gaussian fitted by maximum likelihood."""

    def __init__(self, ridge: float = 1e-6):
        self.ridge = ridge

    def fit(self, Z, y=None):
        Z = _canonical(check_latents(Z))
        if len(Z) < 2:
            raise ValueError("need at least 2 latent codes to fit a Gaussian")
        self.mean_, self.cov_ = _weighted_moments(Z, np.ones(len(Z)), self.ridge)
        self.chol_ = _chol(self.cov_)
        return self

    def _set(self, mean, cov):
        self.mean_ = np.asarray(mean, np.float64)
        self.cov_ = np.asarray(cov, np.float64)
        self.chol_ = _chol(self.cov_)
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        check_is_fitted(self, "chol_")
        noise = rng.standard_normal((n, len(self.mean_)))
        return self.mean_ + noise @ self.chol_.T

    def score_samples(self, Z) -> np.ndarray:
        check_is_fitted(self, "chol_")
        return _gauss_logpdf(check_latents(Z, allow_single=True), self.mean_, self.chol_)

    def score(self, Z, y=None) -> float:
        return float(np.mean(self.score_samples(Z)))


class GaussianMixture(BaseEstimator):
    """Full-covariance Gaussian mixture fitted by EM.

    Means are seeded k-means++ style from data points, covariances from the
    global data covariance, weights uniform. EM stops after ``max_iter``
    M-steps or once the relative log-likelihood gain drops below ``tol``.
    A component whose responsibility mass falls below one point is reseeded
    at the worst-explained sample with weight 1/K, at most ``max_reseeds`` times.

    Attributes after fit: ``weights_``, ``means_``, ``covs_``, ``chols_``,
    ``log_likelihood_`` (mean per sample), ``n_iter_``, ``ll_history_``,
    ``reseed_iters_``.
    """

    def __init__(self, n_components: int = 10, max_iter: int = 100, tol: float = 1e-7,
                 ridge: float = 1e-6, seed: int = 0, n_init: int = 1, max_reseeds: int = 3):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge
        self.seed = seed
        self.n_init = n_init
        self.max_reseeds = max_reseeds

    def _estep(self, Z):
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights_)
        logp = np.stack([_gauss_logpdf(Z, m, c) for m, c in zip(self.means_, self.chols_)],
                        axis=1) + log_w
        norm = _logsumexp(logp, axis=1)
        return logp - norm[:, None], norm

    def _mstep(self, Z, resp):
        K = self.n_components
        mass = resp.sum(axis=0)
        means, covs = [], []
        for k in range(K):
            if mass[k] < 1.0:
                # collapsed: keep the old parameters until the caller reseeds
                m, c = self.means_[k], self.covs_[k]
            else:
                m, c = _weighted_moments(Z, resp[:, k], self.ridge)
            means.append(m)
            covs.append(c)
        self.weights_ = mass / mass.sum()
        self.means_ = np.array(means)
        self.covs_ = np.array(covs)
        self.chols_ = np.array([_chol(c) for c in covs])
        return mass

    def _init(self, Z, rng):
        n, d = Z.shape
        K = self.n_components
        centers = [int(rng.integers(n))]
        closest = np.sum((Z - Z[centers[0]]) ** 2, axis=1)
        for _ in range(1, K):
            total = closest.sum()
            if total > 0:
                idx = int(rng.choice(n, p=closest / total))
            else:
                idx = int(rng.integers(n))
            centers.append(idx)
            closest = np.minimum(closest, np.sum((Z - Z[idx]) ** 2, axis=1))
        _, gcov = _weighted_moments(Z, np.ones(n), self.ridge)
        self.means_ = Z[centers].copy()
        self.covs_ = np.repeat(gcov[None], K, axis=0)
        self.chols_ = np.array([_chol(gcov)] * K)
        self.weights_ = np.full(K, 1.0 / K)
        return gcov

    def _run(self, Z, rng):
        gcov = self._init(Z, rng)
        log_resp, norm = self._estep(Z)
        ll = float(np.mean(norm))
        history = [ll]
        reseed_iters = []
        reseeds = 0
        it = 0
        while it < self.max_iter:
            it += 1
            mass = self._mstep(Z, np.exp(log_resp))
            collapsed = np.flatnonzero(mass < 1.0)
            if collapsed.size:
                if reseeds + collapsed.size > self.max_reseeds:
                    raise GmmCollapseError(
                        f"component(s) {collapsed.tolist()} collapsed after {reseeds} reseeds")
                _, norm = self._estep(Z)
                worst = np.argsort(norm, kind="stable")
                for j, k in enumerate(collapsed):
                    self.means_[k] = Z[worst[j]]
                    self.covs_[k] = gcov
                    self.chols_[k] = _chol(gcov)
                    self.weights_[k] = 1.0 / self.n_components
                self.weights_ /= self.weights_.sum()
                reseeds += collapsed.size
                reseed_iters.append(it)
                log.info("GMM: reseeded components %s at iteration %d", collapsed.tolist(), it)
            log_resp, norm = self._estep(Z)
            new_ll = float(np.mean(norm))
            history.append(new_ll)
            gain = new_ll - ll
            ll = new_ll
            if not collapsed.size and gain < self.tol * abs(ll):
                break
        return ll, it, history, reseed_iters

    def fit(self, Z, y=None):
        Z = _canonical(check_latents(Z))
        if len(Z) < self.n_components:
            raise ValueError(f"need at least {self.n_components} codes, got {len(Z)}")
        rng = np.random.default_rng(self.seed)
        best = None
        for _ in range(max(1, self.n_init)):
            ll, it, hist, reseeds = self._run(Z, rng)
            if best is None or ll > best[0]:
                best = (ll, it, hist, reseeds, self.weights_, self.means_, self.covs_,
                        self.chols_)
        (self.log_likelihood_, self.n_iter_, self.ll_history_, self.reseed_iters_,
         self.weights_, self.means_, self.covs_, self.chols_) = best
        return self

    def _set(self, weights, means, covs):
        self.weights_ = np.asarray(weights, np.float64)
        self.weights_ = self.weights_ / self.weights_.sum()
        self.means_ = np.asarray(means, np.float64)
        self.covs_ = np.asarray(covs, np.float64)
        self.chols_ = np.array([_chol(c) for c in self.covs_])
        self.n_components = len(self.weights_)
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        check_is_fitted(self, "chols_")
        d = self.means_.shape[1]
        comp = rng.choice(len(self.weights_), size=n, p=self.weights_)
        noise = rng.standard_normal((n, d))
        out = np.empty((n, d))
        for k in range(len(self.weights_)):
            sel = comp == k
            out[sel] = self.means_[k] + noise[sel] @ self.chols_[k].T
        return out

    def score_samples(self, Z) -> np.ndarray:
        check_is_fitted(self, "chols_")
        Z = check_latents(Z, allow_single=True)
        return self._estep(Z)[1]

    def score(self, Z, y=None) -> float:
        return float(np.mean(self.score_samples(Z)))

    def predict(self, Z) -> np.ndarray:
        check_is_fitted(self, "chols_")
        return np.argmax(self._estep(check_latents(Z))[0], axis=1)


class SecondStageVAE(BaseEstimator):
    """A small VAE trained on latent codes, used as a learned sampler.

    Codes are standardized per coordinate before training; samples are mapped
    back. The decoder output is linear.
    """

    def __init__(self, hidden: tuple[int, ...] = (64, 64), latent_dim: int | None = None,
                 epochs: int = 50, lr: float = 1e-3, batch_size: int = 100, beta: float = 1.0,
                 seed: int = 0):
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.beta = beta
        self.seed = seed

    def _build(self, d: int):
        from .models import AutoencoderNet, ModelSpec

        spec = ModelSpec("VAE", input_dim=d, latent_dim=self.latent_dim or d,
                         hidden=tuple(self.hidden), output_activation="linear",
                         beta=self.beta)
        return AutoencoderNet(spec, np.random.default_rng([self.seed, 0]), dtype=np.float64)

    def fit(self, Z, y=None):
        from .models import train

        Z = check_latents(Z)
        self.center_ = Z.mean(axis=0)
        self.scale_ = Z.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        U = (Z - self.center_) / self.scale_
        self.net_ = self._build(Z.shape[1])
        self.history_ = train(self.net_, U, None, epochs=self.epochs, lr=self.lr,
                              batch_size=self.batch_size,
                              shuffle_rng=np.random.default_rng([self.seed, 1]),
                              noise_rng=np.random.default_rng([self.seed, 2]))
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        from .models import decode_array

        check_is_fitted(self, "net_")
        u = rng.standard_normal((n, self.net_.spec.latent_dim))
        return decode_array(self.net_, u) * self.scale_ + self.center_

    def score_samples(self, Z) -> np.ndarray:
        raise NotImplementedError("a VAE gives only a bound on the log-density")


def fit_gaussian(latents, ridge: float = 1e-6) -> GaussianDensity:
    return GaussianDensity(ridge=ridge).fit(latents)


def fit_gmm(latents, K: int = 10, max_iter: int = 100, tol: float = 1e-7,
            seed: int = 0, ridge: float = 1e-6) -> GaussianMixture:
    return GaussianMixture(K, max_iter=max_iter, tol=tol, ridge=ridge, seed=seed).fit(latents)


def sample(estimator, n: int, rng: np.random.Generator) -> np.ndarray:
    return estimator.sample(n, rng)


def log_likelihood(estimator, z) -> float:
    """Mean log-density of the rows of ``z``."""
    return estimator.score(z)


DENSITY_KINDS = ("isotropic", "gaussian", "gmm", "2svae")


def make_density(kind: str, *, k: int = 10, max_iter: int = 100, tol: float = 1e-7,
                 ridge: float = 1e-6, seed: int = 0, latent_dim: int | None = None,
                 second_stage_epochs: int = 50):
    if kind == "isotropic":
        return IsotropicPrior(latent_dim)
    if kind == "gaussian":
        return GaussianDensity(ridge)
    if kind == "gmm":
        return GaussianMixture(k, max_iter=max_iter, tol=tol, ridge=ridge, seed=seed)
    if kind == "2svae":
        return SecondStageVAE(epochs=second_stage_epochs, seed=seed)
    raise ValueError(f"unknown density kind {kind!r}; expected one of {DENSITY_KINDS}")
