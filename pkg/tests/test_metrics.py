import numpy as np
import pytest
from scipy.linalg import hadamard
from sklearn.exceptions import NotFittedError

from rae.metrics import (FeatureExtractor, MetricReport, extract_features, frechet,
                         interp_eval, nearest_neighbors, slerp, trace_sqrt_product)


def _random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.1 * np.eye(d)


class _LinearCodec:
    """Stand-in model: encode = x @ P, decode = z @ P.T (orthonormal P)."""

    def __init__(self, P):
        self.P = P

    def transform(self, X):
        return np.asarray(X).reshape(len(X), -1) @ self.P

    def inverse_transform(self, Z):
        return np.asarray(Z) @ self.P.T


class TestFeatures:
    def test_pixels_unchanged(self):
        imgs = np.arange(8, dtype=float).reshape(2, 2, 2) / 8
        fs = extract_features(imgs, "pixels")
        assert fs.features.shape == (2, 4) and fs.mode == "pixels"
        np.testing.assert_array_equal(fs.features, imgs.reshape(2, 4))

    def test_pca_before_fit(self):
        with pytest.raises(NotFittedError):
            extract_features(np.zeros((2, 2, 2)), "pca", FeatureExtractor())
        with pytest.raises(NotFittedError):
            FeatureExtractor().transform(np.zeros((2, 4)))

    def test_full_rank_pca_preserves_distances(self):
        X = np.random.default_rng(0).random((30, 10))
        ex = FeatureExtractor("pca", n_components=10).fit(X)
        F = ex.transform(X)
        d_in = np.linalg.norm(X[:, None] - X[None], axis=-1)
        d_out = np.linalg.norm(F[:, None] - F[None], axis=-1)
        assert np.max(np.abs(d_in - d_out)) < 1e-8

    def test_explained_variance_at_most_one(self):
        ex = FeatureExtractor("pca", n_components=5).fit(np.random.default_rng(1).random((40, 12)))
        assert ex.explained_variance_ratio_.sum() <= 1 + 1e-12
        assert np.all(np.diff(ex.explained_variance_ratio_) <= 0)

    def test_basis_frozen_after_fit(self):
        rng = np.random.default_rng(2)
        ex = FeatureExtractor("pca", n_components=3).fit(rng.random((20, 6)))
        before = ex.transform(np.ones((1, 6)))
        ex.transform(rng.random((50, 6)))
        np.testing.assert_array_equal(ex.transform(np.ones((1, 6))), before)
        assert ex.tag == "pca(3)"

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            FeatureExtractor("inception").fit(np.zeros((3, 4)))


class TestFrechet:
    def test_identical_sets(self):
        A = np.random.default_rng(3).standard_normal((50, 4))
        assert frechet(A, A) < 1e-8

    def test_unit_mean_shift(self):
        A = np.array([[-1.0], [1.0]])
        assert frechet(A, A + 1) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_variance_four_vs_one(self, d):
        # Hadamard columns give exact zero mean, unit variance, zero covariance
        H = hadamard(4)[:, 1:1 + d].astype(float)
        assert frechet(2 * H, H) == pytest.approx(d, abs=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        A, B = rng.standard_normal((60, 5)), 2 * rng.standard_normal((80, 5)) + 1
        assert abs(frechet(A, B) - frechet(B, A)) < 1e-8

    def test_translation(self):
        rng = np.random.default_rng(5)
        A, B = rng.standard_normal((60, 5)), rng.random((70, 5))
        shift = rng.standard_normal(5) * 10
        assert abs(frechet(A, B) - frechet(A + shift, B + shift)) < 1e-8

    def test_non_negative(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            A, B = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
            assert frechet(A, B) >= 0.0

    def test_trace_sqrt_matches_nonsymmetric_eigensolve(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A, B = _random_spd(rng, 4), _random_spd(rng, 4)
            brute = np.sum(np.sqrt(np.linalg.eigvals(A @ B).real))
            assert abs(trace_sqrt_product(A, B) - brute) < 1e-8

    def test_indefinite_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            trace_sqrt_product(np.eye(2), -np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            frechet(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            frechet(np.zeros((1, 2)), np.zeros((3, 2)))


class TestSlerp:
    def test_endpoints(self):
        z1, z2 = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
        np.testing.assert_allclose(slerp(z1, z2, 0.0), z1, atol=1e-15)
        np.testing.assert_allclose(slerp(z1, z2, 1.0), z2, atol=1e-15)

    def test_orthogonal_midpoint(self):
        z = slerp([1.0, 0.0], [0.0, 1.0], 0.5)
        np.testing.assert_allclose(z, [2 ** -0.5, 2 ** -0.5])
        assert np.linalg.norm(z) == pytest.approx(1.0)

    def test_collinear_fallback(self):
        z1 = np.array([0.3, -0.4])
        np.testing.assert_allclose(slerp(z1, 2 * z1, 0.5), 1.5 * z1)

    def test_unit_sphere_preserved(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            a, b = rng.standard_normal(6), rng.standard_normal(6)
            a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
            path = slerp(a, b, np.linspace(0, 1, 11))
            assert np.max(np.abs(np.linalg.norm(path, axis=1) - 1)) < 1e-10

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            slerp([0.0, 0.0], [1.0, 0.0], 0.5)


class TestInterp:
    def _codec(self):
        Q, _ = np.linalg.qr(np.random.default_rng(9).standard_normal((6, 6)))
        return _LinearCodec(Q[:, :3])

    def test_equal_pair_midpoint_is_reconstruction(self):
        m = self._codec()
        x = np.random.default_rng(10).random((4, 6))
        np.testing.assert_allclose(interp_eval(m, x, x), m.inverse_transform(m.transform(x)),
                                   atol=1e-12)

    def test_two_step_path_is_endpoints(self):
        m = self._codec()
        rng = np.random.default_rng(11)
        a, b = rng.random((3, 6)), rng.random((3, 6))
        path = interp_eval(m, a, b, mode="path", steps=2)
        assert path.shape == (3, 2, 6)
        rec = lambda x: m.inverse_transform(m.transform(x))  # noqa: E731
        np.testing.assert_allclose(path[:, 0], rec(a), atol=1e-12)
        np.testing.assert_allclose(path[:, 1], rec(b), atol=1e-12)

    def test_bad_mode(self):
        m = self._codec()
        with pytest.raises(ValueError):
            interp_eval(m, np.ones((1, 6)), np.ones((1, 6)), mode="furthest")
        with pytest.raises(ValueError):
            interp_eval(m, np.ones((1, 6)), np.ones((1, 6)), mode="path", steps=1)


class TestNearestNeighbors:
    def test_query_in_training_set(self):
        X = np.random.default_rng(12).random((20, 3, 3))
        idx, dist = nearest_neighbors(X[7:8], X, k=3)
        assert idx[0, 0] == 7 and dist[0, 0] == 0.0

    def test_two_points(self):
        idx, dist = nearest_neighbors(np.array([[0.9]]), np.array([[0.0], [1.0]]), k=1)
        assert idx[0, 0] == 1 and dist[0, 0] == pytest.approx(0.1)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(13)
        X, Q = rng.random((300, 16)), rng.random((100, 16))
        idx, dist = nearest_neighbors(Q, X, k=5, block=32)
        for i, q in enumerate(Q):
            d = [np.sqrt(sum((q[j] - x[j]) ** 2 for j in range(16))) for x in X]
            ref = sorted(range(len(X)), key=lambda t: (d[t], t))[:5]
            assert idx[i].tolist() == ref
            np.testing.assert_allclose(dist[i], [d[t] for t in ref], rtol=1e-12)
        assert np.all(np.diff(dist, axis=1) >= 0)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((1, 2)), np.zeros((3, 2)), k=4)


class TestReport:
    def test_csv_layout(self):
        rep = MetricReport(1.5, {"gmm": 0.25, "N01": 2.0}, 0.75, 100, "pca(64)", 3)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "metric,density,value,n_samples,feature_mode,seed"
        assert lines[1:] == ["rec,,1.500000,100,pca(64),3", "sample,N01,2.000000,100,pca(64),3",
                             "sample,gmm,0.250000,100,pca(64),3",
                             "interp,,0.750000,100,pca(64),3"]
        assert "gmm" in rep.table()
