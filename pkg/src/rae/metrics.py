"""Fréchet scoring on pixel/PCA features, slerp interpolation, nearest neighbours."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

__all__ = [
    "FeatureSet",
    "FeatureExtractor",
    "extract_features",
    "frechet",
    "trace_sqrt_product",
    "slerp",
    "interp_eval",
    "nearest_neighbors",
    "MetricReport",
    "evaluate_model",
]


@dataclass
class FeatureSet:
    features: np.ndarray
    mode: str


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Flattened pixels, or a projection onto the top-k principal components.

    In ``pca`` mode the basis is fitted once (on training images) and frozen.
    """

    def __init__(self, mode: str = "pca", n_components: int = 64):
        self.mode = mode
        self.n_components = n_components

    @property
    def tag(self) -> str:
        return "pixels" if self.mode == "pixels" else f"pca({self.n_components})"

    def fit(self, images, y=None):
        X = _flatten(images)
        if self.mode == "pixels":
            self.dim_ = X.shape[1]
            return self
        if self.mode != "pca":
            raise ValueError(f"unknown feature mode {self.mode!r}")
        self.mean_ = X.mean(axis=0)
        _, s, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        k = min(self.n_components, vt.shape[0])
        self.components_ = vt[:k]
        var = s ** 2
        self.explained_variance_ratio_ = var[:k] / var.sum()
        self.singular_values_ = s
        self.dim_ = k
        return self

    def transform(self, images) -> np.ndarray:
        X = _flatten(images)
        if self.mode == "pixels":
            return X
        if not hasattr(self, "components_"):
            raise NotFittedError("PCA features requested before fitting")
        return (X - self.mean_) @ self.components_.T


def _flatten(images) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    return X.reshape(len(X), int(np.prod(X.shape[1:])))


def extract_features(images, mode: str = "pixels",
                     extractor: FeatureExtractor | None = None) -> FeatureSet:
    if mode == "pixels":
        return FeatureSet(_flatten(images), "pixels")
    if extractor is None or not hasattr(extractor, "components_"):
        raise NotFittedError("PCA features requested before fitting")
    return FeatureSet(extractor.transform(images), extractor.tag)


def _moments(X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("Fréchet distance needs at least 2 feature rows")
    mu = X.mean(axis=0)
    diff = X - mu
    return mu, diff.T @ diff / len(X)


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    w = np.clip(w, 0, None)
    return (V * np.sqrt(w)) @ V.T


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray, tol: float = 1e-10) -> float:
    """``Tr((A B)^{1/2})`` via the symmetric form ``(A^{1/2} B A^{1/2})^{1/2}``."""
    ra = _psd_sqrt(cov_a)
    M = ra @ cov_b @ ra
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if w.min(initial=0.0) < -tol:
        raise np.linalg.LinAlgError(f"indefinite product, eigenvalue {w.min():.3g}")
    return float(np.sum(np.sqrt(np.clip(w, 0, None))))


def frechet(A, B) -> float:
    """Fréchet distance between Gaussian moment fits (MLE) of two feature sets."""
    A = A.features if isinstance(A, FeatureSet) else A
    B = B.features if isinstance(B, FeatureSet) else B
    mu_a, cov_a = _moments(A)
    mu_b, cov_b = _moments(B)
    if mu_a.shape != mu_b.shape:
        raise ValueError(f"feature dims differ: {mu_a.shape[0]} vs {mu_b.shape[0]}")
    d2 = float(np.sum((mu_a - mu_b) ** 2)) + float(np.trace(cov_a) + np.trace(cov_b)) \
        - 2.0 * trace_sqrt_product(cov_a, cov_b)
    return max(d2, 0.0)


def slerp(z1, z2, t):
    """Spherical interpolation; linear when the angle is below 1e-6 rad.

    ``t`` may be a scalar or an array; for an array the result has one row
    per value of ``t``.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
    if n1 == 0 or n2 == 0:
        raise ValueError("slerp endpoints must be non-zero")
    t = np.asarray(t, dtype=np.float64)
    ts = t[..., None]
    cos = np.clip(z1 @ z2 / (n1 * n2), -1.0, 1.0)
    omega = np.arccos(cos)
    if omega < 1e-6:
        return (1 - ts) * z1 + ts * z2
    s = np.sin(omega)
    return np.sin((1 - ts) * omega) / s * z1 + np.sin(ts * omega) / s * z2


def interp_eval(model, x1, x2, mode: str = "midpoint", steps: int = 10) -> np.ndarray:
    """Decode slerp paths between encoded pairs.

    ``model`` is anything with ``transform`` (encode) and ``inverse_transform``
    (decode). ``midpoint`` returns one decoded image per pair, shape (n, D);
    ``path`` returns (n, steps, D) with the endpoints included.
    """
    z1 = np.asarray(model.transform(x1), dtype=np.float64)
    z2 = np.asarray(model.transform(x2), dtype=np.float64)
    if mode == "midpoint":
        mids = np.array([slerp(a, b, 0.5) for a, b in zip(z1, z2)]).reshape(len(z1), -1)
        return np.asarray(model.inverse_transform(mids))
    if mode != "path":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if steps < 2:
        raise ValueError("path mode needs at least 2 steps")
    ts = np.linspace(0.0, 1.0, steps)
    paths = np.array([slerp(a, b, ts) for a, b in zip(z1, z2)])
    n, d = len(z1), z1.shape[1] if z1.ndim == 2 else 0
    flat = np.asarray(model.inverse_transform(paths.reshape(n * steps, d)))
    return flat.reshape(n, steps, -1)


def nearest_neighbors(samples, train_images, k: int = 1, block: int = 256):
    """Exact k-NN under pixel L2. Returns (indices, distances), each (n, k).

    Ties are broken by training index.
    """
    Q = _flatten(samples)
    X = _flatten(train_images)
    if Q.shape[1] != X.shape[1]:
        raise ValueError("sample and training image sizes differ")
    if k > len(X):
        raise ValueError(f"k={k} exceeds training-set size {len(X)}")
    xx = np.sum(X * X, axis=1)
    m = min(len(X), k + 16)
    idx_out = np.empty((len(Q), k), dtype=np.int64)
    dist_out = np.empty((len(Q), k))
    for i in range(0, len(Q), block):
        q = Q[i:i + block]
        approx = xx[None, :] - 2.0 * q @ X.T
        cand = np.argpartition(approx, m - 1, axis=1)[:, :m] if m < len(X) else \
            np.broadcast_to(np.arange(len(X)), (len(q), len(X)))
        for r in range(len(q)):
            c = np.sort(cand[r])
            exact = np.sqrt(np.sum((X[c] - q[r]) ** 2, axis=1))
            order = np.lexsort((c, exact))[:k]
            idx_out[i + r] = c[order]
            dist_out[i + r] = exact[order]
    return idx_out, dist_out


@dataclass
class MetricReport:
    frechet_rec: float
    frechet_sample: dict[str, float]
    frechet_interp: float
    n_samples: int
    feature_mode: str
    seed: int
    extra: dict[str, float] = field(default_factory=dict)

    HEADER = ("metric", "density", "value", "n_samples", "feature_mode", "seed")

    def rows(self) -> list[list]:
        common = [self.n_samples, self.feature_mode, self.seed]
        out = [["rec", "", self.frechet_rec, *common]]
        for kind in sorted(self.frechet_sample):
            out.append(["sample", kind, self.frechet_sample[kind], *common])
        out.append(["interp", "", self.frechet_interp, *common])
        for key in sorted(self.extra):
            out.append([key, "", self.extra[key], *common])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for row in self.rows():
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'metric':<10}{'density':<12}{'frechet':>12}"]
        for metric, dens, val, *_ in self.rows():
            lines.append(f"{metric:<10}{dens:<12}{val:>12.4f}")
        lines.append(f"features={self.feature_mode} n={self.n_samples} seed={self.seed}")
        return "\n".join(lines)


def evaluate_model(model, densities: dict, x_val, x_test, extractor: FeatureExtractor,
                   n_samples: int = 2000, rng: np.random.Generator | None = None,
                   seed: int = 0) -> MetricReport:
    """Reconstruction, per-density random-sample, and midpoint-interpolation scores.

    Every score compares against features of (up to) ``n_samples`` test images.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    x_val = np.asarray(x_val)
    x_test = np.asarray(x_test)
    n = min(n_samples, len(x_test))
    test_feat = extractor.transform(x_test[rng.permutation(len(x_test))[:n]])

    rec_idx = rng.permutation(len(x_val))[:min(n_samples, len(x_val))]
    recs = model.inverse_transform(model.transform(x_val[rec_idx]))
    f_rec = frechet(extractor.transform(recs), test_feat)

    f_samples = {}
    for name in sorted(densities):
        z = densities[name].sample(n_samples, rng)
        f_samples[name] = frechet(extractor.transform(model.inverse_transform(z)), test_feat)

    a = rng.integers(len(x_val), size=n_samples)
    b = rng.integers(len(x_val), size=n_samples)
    mids = interp_eval(model, x_val[a], x_val[b], mode="midpoint")
    f_interp = frechet(extractor.transform(mids), test_feat)
    return MetricReport(f_rec, f_samples, f_interp, n_samples, extractor.tag, seed)
