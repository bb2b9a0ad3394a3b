"""Batch command line: train, fit densities, sample, evaluate, sweep.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import load_autoencoder, load_density, save_autoencoder, save_density
from .config import ConfigError, RunConfig, load_config
from .data import IdxError
from .density import DENSITY_KINDS, GmmCollapseError, make_density
from .estimator import Autoencoder
from .io import CorruptFileError, image_grid, write_csv, write_pgm
from .metrics import FeatureExtractor, evaluate_model, interp_eval, nearest_neighbors
from .models import EpochRecord, TrainingDiverged
from .seeding import stream, substream_seed
from .tensor import NonFiniteError

log = logging.getLogger("rae")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class _Exit(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def load_split(cfg: RunConfig) -> data_mod.DatasetSplit:
    d = cfg.data
    if d.source == "synthetic":
        split = data_mod.synthetic_manifold(d.synthetic_n, d.synthetic_dim, d.noise_std,
                                            d.split_seed)
    else:
        train, test = data_mod.load_mnist(d.root or None)
        split = data_mod.pad_and_split(train, d.val_count, d.split_seed, test, d.pad)
    if d.train_subset or d.val_subset or d.test_subset:
        split = split.subset(d.train_subset or None, d.val_subset or None,
                             d.test_subset or None, seed=d.split_seed)
    return split


def build_estimator(cfg: RunConfig, seed: int | None = None) -> Autoencoder:
    m, r, o = cfg.model, cfg.reg, cfg.optim
    return Autoencoder(kind=m.kind, latent_dim=m.latent_dim, hidden=tuple(m.hidden),
                       activation=m.activation, beta=m.beta, l2=r.l2, gp=r.gp, sn=r.sn,
                       gp_step=r.gp_step, sn_iters=r.sn_iters, sigma_cv=m.sigma_cv,
                       k_mc=m.k_mc, lr=o.lr, epochs=o.epochs, batch_size=o.batch_size,
                       patience=o.patience, seed=cfg.seed if seed is None else seed,
                       dtype=o.dtype)


def _history_rows(history: list[EpochRecord]):
    return [h.row() for h in history]


def train_model(cfg: RunConfig, split, seed: int | None = None) -> Autoencoder:
    est = build_estimator(cfg, seed)
    s = est.seed
    rngs = (stream(s, "init"), stream(s, "shuffle"), stream(s, "noise"))
    return est.fit(split.train, X_val=split.val, rngs=rngs)


def fit_density(kind: str, cfg: RunConfig, Z: np.ndarray):
    d = cfg.density
    est = make_density(kind, k=d.k, max_iter=d.max_iter, tol=d.tol, ridge=d.ridge,
                       seed=substream_seed(cfg.seed, "density"), latent_dim=Z.shape[1],
                       second_stage_epochs=d.second_stage_epochs)
    return est.fit(Z)


def eval_rng(cfg: RunConfig) -> np.random.Generator:
    """The eval sub-stream; ``eval.seed`` replaces the master seed for it alone."""
    return stream(cfg.eval.seed if cfg.eval.seed >= 0 else cfg.seed, "eval")


def feature_extractor(cfg: RunConfig, split) -> FeatureExtractor:
    fx = FeatureExtractor(cfg.eval.features, cfg.eval.pca_k)
    return fx.fit(split.train[:10000])


def cmd_train(args, cfg):
    split = load_split(cfg)
    est = build_estimator(cfg)
    s = est.seed
    rngs = (stream(s, "init"), stream(s, "shuffle"), stream(s, "noise"))
    try:
        est.fit(split.train, X_val=split.val, rngs=rngs)
    except TrainingDiverged as exc:
        est.history_ = exc.history
        est.epoch_ = len(exc.history)
        save_autoencoder(args.checkpoint, est)
        if args.log:
            write_csv(args.log, EpochRecord.FIELDS, _history_rows(exc.history))
        raise _Exit(EXIT_NUMERIC, f"training diverged ({exc}); last good checkpoint saved")
    save_autoencoder(args.checkpoint, est, {"data": split.provenance})
    if args.log:
        write_csv(args.log, EpochRecord.FIELDS, _history_rows(est.history_))
    print(f"trained {est.net_.spec.label} for {len(est.history_)} epochs -> {args.checkpoint}")


def cmd_fit_density(args, cfg):
    model = load_autoencoder(args.checkpoint)
    split = load_split(cfg)
    Z_train = model.transform(split.train)
    est = fit_density(args.kind, cfg, Z_train)
    save_density(args.out, est)
    rows = []
    if args.kind != "2svae":
        rows.append(["train", float(est.score(Z_train))])
        if len(split.val):
            rows.append(["val", float(est.score(model.transform(split.val)))])
    if args.report:
        write_csv(args.report, ["split", "mean_log_likelihood"], rows)
    for name, ll in rows:
        print(f"{name} mean log-likelihood: {ll:.6f}")


def cmd_sample(args, cfg):
    model = load_autoencoder(args.checkpoint)
    dens = load_density(args.density)
    rng = eval_rng(cfg)
    Z = dens.sample(args.n, rng) if args.n > 0 else np.zeros((0, model.latent_dim))
    images = model.inverse_transform(Z) if args.n > 0 else np.zeros((0, *model.item_shape_))
    write_pgm(args.out, image_grid(images, args.cols))
    if args.latents:
        write_csv(args.latents, [f"z{i}" for i in range(Z.shape[1])], Z.tolist())
    if args.images_csv:
        data_mod.export_csv(args.images_csv, images)


def cmd_reconstruct(args, cfg):
    model = load_autoencoder(args.checkpoint)
    x = load_split(cfg).get(args.split)
    idx = np.sort(eval_rng(cfg).permutation(len(x))[:args.n])
    x = x[idx]
    rec = model.reconstruct(x) if len(x) else x
    write_pgm(args.out, image_grid(np.concatenate([x, rec]), max(len(x), 1)))


def cmd_interpolate(args, cfg):
    model = load_autoencoder(args.checkpoint)
    x = load_split(cfg).get(args.split)
    rng = eval_rng(cfg)
    a = rng.integers(len(x), size=args.pairs)
    b = rng.integers(len(x), size=args.pairs)
    if args.mode == "path":
        frames = interp_eval(model, x[a], x[b], "path", args.steps)
        cols = args.steps
    else:
        mids = interp_eval(model, x[a], x[b], "midpoint")
        ends_a, ends_b = model.reconstruct(x[a]), model.reconstruct(x[b])
        frames = np.stack([ends_a.reshape(len(a), -1), mids.reshape(len(a), -1),
                           ends_b.reshape(len(a), -1)], axis=1)
        cols = 3
    frames = frames.reshape(-1, *model.item_shape_)
    write_pgm(args.out, image_grid(frames, cols))


def _load_densities(specs):
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path = name
        est = load_density(path)
        out[name if sep else type(est).__name__] = est
    return out


def cmd_eval(args, cfg):
    model = load_autoencoder(args.checkpoint)
    split = load_split(cfg)
    dens = _load_densities(args.density)
    if args.features:
        cfg.eval.features = args.features
    fx = feature_extractor(cfg, split)
    report = evaluate_model(model, dens, split.val, split.test, fx, cfg.eval.n_samples,
                            rng=eval_rng(cfg), seed=cfg.seed)
    Path(args.out).write_text(report.to_csv())
    print(report.table())


def cmd_nn(args, cfg):
    samples = data_mod.read_csv_matrix(args.samples)
    train = load_split(cfg).train
    idx, dist = nearest_neighbors(samples, train, args.k)
    header = ["sample"] + [f"idx{j}" for j in range(args.k)] + \
        [f"dist{j}" for j in range(args.k)]
    rows = [[i, *idx[i].tolist(), *dist[i].tolist()] for i in range(len(idx))]
    write_csv(args.out, header, rows)


def cmd_export_latents(args, cfg):
    model = load_autoencoder(args.checkpoint)
    split = load_split(cfg)
    x = split.get(args.split)
    Z = model.transform(x)
    labels = getattr(split, f"{args.split}_labels")
    header = [f"z{i}" for i in range(Z.shape[1])] + (["label"] if labels is not None else [])
    rows = [list(z) + ([int(labels[i])] if labels is not None else [])
            for i, z in enumerate(Z.astype(np.float64))]
    write_csv(args.out, header, rows)


SWEEP_KEYS = ("model.beta", "model.k_mc", "reg.l2", "reg.gp", "model.sigma_cv")


def sweep(cfg: RunConfig, key: str, values: list[str], split=None):
    """Train, fit densities and evaluate once per grid value; rows sorted by value."""
    if key not in SWEEP_KEYS:
        raise ConfigError(f"cannot sweep {key!r}; choose from {SWEEP_KEYS}")
    split = split if split is not None else load_split(cfg)
    fx = feature_extractor(cfg, split)
    cells = []
    for i, raw in enumerate(values):
        cell = copy.deepcopy(cfg)
        cell.set(key, raw)
        cell.validate()
        cells.append((cell.get(key), i, cell))
    rows = []
    for value, i, cell in sorted(cells, key=lambda c: (c[0], c[1])):
        cell_seed = substream_seed(cfg.seed, f"cell{i}")
        cell.seed = cell_seed
        model = train_model(cell, split, cell_seed)
        Z = model.transform(split.train)
        kinds = ["isotropic", "gmm"] if cell.model.kind == "VAE" else ["gaussian", "gmm"]
        dens = {k: fit_density(k, cell, Z) for k in kinds}
        rep = evaluate_model(model, dens, split.val, split.test, fx, cell.eval.n_samples,
                             rng=stream(cell_seed, "eval"), seed=cell_seed)
        val_rec = model.history_[-1].val_rec if model.history_ else float("nan")
        for metric, dname, score, *_ in rep.rows():
            rows.append([key, value, cell_seed, metric, dname, score, val_rec])
    return rows


def cmd_sweep(args, cfg):
    values = [v for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.param, values)
    write_csv(args.out, ["param", "value", "seed", "metric", "density", "frechet", "val_rec"],
              rows)
    for r in rows:
        print(",".join(str(v) for v in r))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fit-density", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--kind", choices=DENSITY_KINDS, default="gmm")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit_density)

    s = sub.add_parser("sample", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--density", required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--cols", type=int, default=8)
    s.add_argument("--out", required=True)
    s.add_argument("--latents")
    s.add_argument("--images-csv")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("reconstruct", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("interpolate", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--mode", choices=("midpoint", "path"), default="path")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--pairs", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("eval", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--density", action="append", default=[], metavar="[NAME=]PATH")
    s.add_argument("--features", choices=("pixels", "pca"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("nn", parents=[common])
    s.add_argument("--samples", required=True, help="CSV of flattened images")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nn)

    s = sub.add_parser("export-latents", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_latents)

    s = sub.add_parser("sweep", parents=[common])
    s.add_argument("--param", required=True, choices=SWEEP_KEYS)
    s.add_argument("--values", required=True, help="comma-separated grid values")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        args.func(args, cfg)
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, IdxError) as exc:
        code = EXIT_IO if isinstance(exc, IdxError) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (OSError, CorruptFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteError, TrainingDiverged, GmmCollapseError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
