"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The MNIST criteria (7-9) need the IDX files under $RAE_DATA_ROOT (default
/root/data/mnist) and take roughly a quarter of an hour together on one CPU.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.linalg import hadamard

from rae import tensor as T
from rae.checkpoint import load_autoencoder, save_autoencoder
from rae.cli import main
from rae.data import read_idx, write_idx
from rae.density import GaussianMixture, IsotropicPrior, fit_gaussian, fit_gmm
from rae.estimator import Autoencoder
from rae.metrics import FeatureExtractor, evaluate_model, frechet, interp_eval
from rae.models import kl_closed_form
from rae.regularizers import PowerIterState, grad_penalty, spectral_normalize
from rae.seeding import stream, substream_seed
from rae.tensor import Graph, Parameter, grad_check

from oracles import (mc_kl_standard_normal, tanh_decoder_jacobian_sq_frobenius,
                     top_singular_value)

SEEDS = range(5)


@pytest.fixture
def verdict(request):
    def record(n, ok, detail, elapsed, limit=None):
        in_time = limit is None or elapsed < limit
        status = "PASS" if ok and in_time else "FAIL"
        budget = f" / limit {limit:.0f}s" if limit is not None else ""
        line = f"criterion {n:>2} {status}: {detail} [{elapsed:.1f}s{budget}]"
        request.config.acceptance_results[n] = line
        print(line)
        return ok and in_time

    return record


def test_01_gradient_correctness(verdict):
    t0 = time.perf_counter()
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        depth = int(rng.integers(1, 5))
        sizes = [int(w) for w in rng.integers(1, 17, size=depth + 1)]
        act = ["relu", "tanh", "sigmoid"][seed % 3]
        params = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            params += [Parameter(rng.standard_normal((a, b)) / np.sqrt(a)),
                       Parameter(0.1 * rng.standard_normal(b))]
        x = rng.standard_normal((6, sizes[0]))
        y = rng.standard_normal((6, sizes[-1]))

        def build(g):
            h = g.constant(x)
            for i in range(0, len(params), 2):
                h = T.affine(h, g.param(params[i]), g.param(params[i + 1]))
                if i < len(params) - 2:
                    h = T.activation(h, act)
            return T.mse(h, g.constant(y))

        errs.append(grad_check(build, params, h=1e-5))
    worst = max(errs)
    assert verdict(1, worst < 1e-4, f"max rel. error {worst:.2e} over 10 MLPs (< 1e-4)",
                   time.perf_counter() - t0, 30)


def test_02_kl_closed_form(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(2, 9))
        mu, lv = rng.standard_normal(d), rng.standard_normal(d)
        g = Graph()
        closed = kl_closed_form(g.constant(mu[None]), g.constant(lv[None])).item()
        mc = mc_kl_standard_normal(mu, lv, 10 ** 6, rng)
        worst = max(worst, abs(closed - mc) / closed)
    assert verdict(2, worst < 0.02, f"max rel. deviation from 1e6-sample MC {worst:.2e} (< 2%)",
                   time.perf_counter() - t0, 60)


def test_03_spectral_normalization(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((int(rng.integers(2, 33)), int(rng.integers(2, 33))))
        normed, _ = spectral_normalize([W], PowerIterState.init([W.shape], rng), iters=200)
        worst = max(worst, abs(top_singular_value(normed[0]) - 1.0))
    assert verdict(3, worst < 1e-3,
                   f"max |sigma_max - 1| = {worst:.2e} after 200 iterations, 20 matrices",
                   time.perf_counter() - t0, 5)


def test_04_gradient_penalty(verdict):
    t0 = time.perf_counter()
    affine_err = tanh_err = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d, D = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        W, b = rng.standard_normal((d, D)), rng.standard_normal(D)
        g = Graph()
        Wt, bt = g.constant(W), g.constant(b)
        val = grad_penalty(lambda u: T.affine(u, Wt, bt), g.constant(rng.standard_normal((5, d))),
                           1e-3).item()
        affine_err = max(affine_err, abs(val - np.sum(W ** 2)))

        # small tanh decoder; first-layer weights at 0.4/sqrt(d)
        d, hd, D = int(rng.integers(1, 5)), int(rng.integers(2, 9)), int(rng.integers(1, 9))
        W1 = 0.4 * rng.standard_normal((d, hd)) / np.sqrt(d)
        b1 = 0.1 * rng.standard_normal(hd)
        W2 = rng.standard_normal((hd, D)) / np.sqrt(hd)
        b2 = 0.1 * rng.standard_normal(D)
        z = rng.standard_normal((5, d))
        g = Graph()
        c1, cb1, c2, cb2 = map(g.constant, (W1, b1, W2, b2))
        val = grad_penalty(lambda u: T.affine(T.tanh(T.affine(u, c1, cb1)), c2, cb2),
                           g.constant(z), 1e-3).item()
        tanh_err = max(tanh_err, abs(val - tanh_decoder_jacobian_sq_frobenius(z, W1, b1, W2)))
    ok = affine_err < 1e-8 and tanh_err < 1e-6
    assert verdict(4, ok, f"affine max error {affine_err:.1e} (< 1e-8), tanh vs explicit "
                          f"Jacobian {tanh_err:.1e} (< 1e-6)", time.perf_counter() - t0, 10)


def test_05_em_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_drop, fitted = 0.0, 0
    for trial in range(100):
        n, d, K = int(rng.integers(50, 501)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
        centers = 3 * rng.standard_normal((K, d))
        Z = centers[rng.integers(K, size=n)] + rng.standard_normal((n, d))
        m = GaussianMixture(K, seed=trial).fit(Z)
        h = np.array(m.ll_history_)
        # a reseed restarts the component, so compare only steps without one
        steps = [i for i in range(1, len(h)) if i not in m.reseed_iters_]
        drops = [(h[i - 1] - h[i]) / abs(h[i - 1]) for i in steps]
        worst_drop = max([worst_drop, *drops])
        fitted += 1
    monotone = worst_drop <= 1e-9

    half = 1000
    r2 = np.random.default_rng(6)
    Z = np.vstack([r2.standard_normal((half, 2)) + 5, r2.standard_normal((half, 2)) - 5])
    m = fit_gmm(Z, K=2, seed=0)
    truth = np.array([[5.0, 5.0], [-5.0, -5.0]])
    mean_err = min(np.max(np.abs(m.means_[list(p)] - truth))
                   for p in itertools.permutations(range(2)))

    Z1 = np.random.default_rng(7).standard_normal((500, 6))
    g, m1 = fit_gaussian(Z1), fit_gmm(Z1, K=1)
    exact = m1.means_[0].tobytes() == g.mean_.tobytes() and \
        m1.covs_[0].tobytes() == g.cov_.tobytes()

    ok = monotone and fitted == 100 and mean_err < 0.1 and exact
    assert verdict(5, ok, f"worst relative LL drop {worst_drop:.1e} on {fitted} datasets; "
                          f"2-cluster mean error {mean_err:.3f}; K=1 bit-exact {exact}",
                   time.perf_counter() - t0, 60)


def test_06_frechet_analytic(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    A = rng.standard_normal((200, 8))
    self_d = frechet(A, A)
    one_d = frechet(np.array([[-1.0], [1.0]]), np.array([[0.0], [2.0]]))
    H = hadamard(8)[:, 1:6].astype(float)  # zero mean, unit variance, uncorrelated
    diag_err = abs(frechet(2 * H, H) - 5 * (2 - 1) ** 2)
    B = 1.5 * rng.standard_normal((150, 8)) + 0.3
    sym = abs(frechet(A, B) - frechet(B, A))
    ok = self_d < 1e-8 and abs(one_d - 1) < 1e-6 and diag_err < 1e-6 and sym < 1e-8
    assert verdict(6, ok, f"self {self_d:.1e}; 1-D shift {one_d:.8f}; diagonal error "
                          f"{diag_err:.1e}; asymmetry {sym:.1e}", time.perf_counter() - t0, 5)


# -- MNIST directional reproductions -------------------------------------------------------

Q3_MODELS = {
    "AE": dict(kind="AE"),
    "RAE": dict(kind="RAE"),
    "RAE-L2": dict(kind="RAE", l2=1e-6),
    "VAE": dict(kind="VAE"),
}


@pytest.fixture(scope="module")
def q3_runs(mnist_split):
    """Train every Q3 model for every seed once; criteria 7 and 9 share the results."""
    t0 = time.perf_counter()
    sub = mnist_split.subset(10000, 2000, 2000, seed=0)
    fx = FeatureExtractor("pca", 64).fit(sub.train)
    runs = {}
    for seed in SEEDS:
        for label, kw in Q3_MODELS.items():
            model = Autoencoder(latent_dim=16, hidden=(512, 256), epochs=10, seed=seed, **kw)
            model.fit(sub.train, X_val=sub.val)
            Z = model.transform(sub.train)
            dens = {"N01": IsotropicPrior(16).fit(None),
                    "GMM10": GaussianMixture(10, seed=substream_seed(seed, "density")).fit(Z)}
            rep = evaluate_model(model, dens, sub.val, sub.test, fx, 2000,
                                 rng=stream(seed, "eval"), seed=seed)
            runs[label, seed] = (model, rep)
    return sub, runs, time.perf_counter() - t0


@pytest.mark.slow
def test_07_ex_post_density_improves_samples(verdict, q3_runs):
    _, runs, elapsed = q3_runs
    parts, ok = [], True
    for label in Q3_MODELS:
        wins = 0
        for seed in SEEDS:
            fs = runs[label, seed][1].frechet_sample
            wins += fs["GMM10"] <= fs["N01"]
            print(f"  {label:7s} seed {seed}: N(0,I) {fs['N01']:.3f}  GMM-10 {fs['GMM10']:.3f}  "
                  f"rec {runs[label, seed][1].frechet_rec:.3f}")
        parts.append(f"{label} {wins}/5")
        ok &= wins >= 4
    assert verdict(7, ok, "GMM-10 <= N(0,I) Frechet: " + ", ".join(parts), elapsed, 30 * 60)


@pytest.mark.slow
def test_08_more_mc_samples_help(verdict, mnist_split):
    t0 = time.perf_counter()
    sub = mnist_split.subset(3000, 1000, 0, seed=1)
    wins = 0
    for seed in SEEDS:
        val_rec = {}
        for k in (1, 16):
            model = Autoencoder(kind="VAE", k_mc=k, latent_dim=16, hidden=(256, 128), epochs=5,
                                seed=seed).fit(sub.train, X_val=sub.val)
            val_rec[k] = model.history_[-1].val_rec
        wins += val_rec[16] <= val_rec[1]
        print(f"  seed {seed}: val rec k=1 {val_rec[1]:.3f}  k=16 {val_rec[16]:.3f}")
    assert verdict(8, wins >= 4, f"k_mc=16 val rec <= k_mc=1 on {wins}/5 seeds",
                   time.perf_counter() - t0, 20 * 60)


@pytest.mark.slow
def test_09_interpolation_smoothness(verdict, q3_runs):
    t0 = time.perf_counter()
    sub, runs, _ = q3_runs
    good_seeds, fracs = 0, []
    for seed in SEEDS:
        model = runs["RAE-L2", seed][0]
        rng = stream(seed, "interp")
        a = rng.choice(len(sub.val), 50, replace=False)
        b = rng.choice(len(sub.val), 50, replace=False)
        path = interp_eval(model, sub.val[a], sub.val[b], mode="path", steps=10)
        steps = np.linalg.norm(np.diff(path.astype(np.float64), axis=1), axis=2).max(axis=1)
        ends = np.linalg.norm(path[:, -1].astype(np.float64) - path[:, 0], axis=1)
        frac = float(np.mean(steps < ends))
        fracs.append(frac)
        good_seeds += frac >= 0.9
    assert verdict(9, good_seeds >= 4, f"pairs with max step < endpoint distance per seed "
                                       f"{[round(f, 2) for f in fracs]}; {good_seeds}/5 seeds "
                                       f">= 90%", time.perf_counter() - t0)


def test_10_infrastructure(verdict, tmp_path, mnist_root):
    t0 = time.perf_counter()
    checks = {}

    # IDX: a hand-built fixture and the real label file both survive parse -> write
    fixture = tmp_path / "fixture-idx3-ubyte"
    pixels = np.array([[[0, 255], [7, 128]], [[1, 2], [3, 4]]], dtype=np.uint8)
    fixture.write_bytes(b"\x00\x00\x08\x03" + (2).to_bytes(4, "big") * 3 + pixels.tobytes())
    write_idx(tmp_path / "again", read_idx(fixture))
    labels = mnist_root / "t10k-labels-idx1-ubyte"
    write_idx(tmp_path / "labels", read_idx(labels))
    checks["idx"] = ((tmp_path / "again").read_bytes() == fixture.read_bytes()
                     and (tmp_path / "labels").read_bytes() == labels.read_bytes())

    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"seed = 11\ndata.root = {mnist_root}\ndata.train_subset = 1000\n"
                   "data.val_subset = 200\ndata.test_subset = 200\nmodel.hidden = 64\n"
                   "optim.epochs = 2\neval.n_samples = 200\neval.pca_k = 16\n")

    def run(tag):
        d = tmp_path / tag
        d.mkdir()
        base = ["--config", str(cfg)]
        codes = [
            main(["train", *base, "--checkpoint", str(d / "m.ckpt"), "--log", str(d / "log.csv")]),
            main(["fit-density", *base, "--checkpoint", str(d / "m.ckpt"),
                  "--out", str(d / "g.dens"), "--report", str(d / "ll.csv")]),
            main(["eval", *base, "--checkpoint", str(d / "m.ckpt"),
                  "--density", f"gmm={d / 'g.dens'}", "--out", str(d / "eval.csv")]),
            main(["export-latents", *base, "--checkpoint", str(d / "m.ckpt"),
                  "--out", str(d / "z.csv")]),
        ]
        return d, codes

    (a, ca), (b, cb) = run("a"), run("b")
    names = ("log.csv", "ll.csv", "eval.csv", "z.csv", "m.ckpt")
    checks["determinism"] = ca == cb == [0] * 4 and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names)

    save_autoencoder(tmp_path / "resaved.ckpt", load_autoencoder(a / "m.ckpt"))
    checks["checkpoint"] = (tmp_path / "resaved.ckpt").read_bytes() == (a / "m.ckpt").read_bytes()

    ok = all(checks.values())
    assert verdict(10, ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items()),
                   time.perf_counter() - t0, 5 * 60)
