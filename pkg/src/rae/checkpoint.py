"""Convert fitted autoencoders and density estimators to and from containers."""

from __future__ import annotations

import numpy as np

from .density import GaussianDensity, GaussianMixture, IsotropicPrior, SecondStageVAE
from .estimator import Autoencoder
from .io import FORMAT_VERSION, Container, CorruptFileError, read_container, save_container
from .models import AutoencoderNet, ModelSpec
from .regularizers import RegularizerConfig

__all__ = [
    "autoencoder_to_container",
    "autoencoder_from_container",
    "density_to_container",
    "density_from_container",
    "save_autoencoder",
    "load_autoencoder",
    "save_density",
    "load_density",
]


def _shape_str(shape) -> str:
    return "x".join(str(int(s)) for s in shape)


def _parse_shape(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split("x")) if s else ()


def _spec_meta(spec: ModelSpec) -> dict[str, str]:
    return {
        "kind": spec.kind,
        "input_dim": str(spec.input_dim),
        "latent_dim": str(spec.latent_dim),
        "hidden": ",".join(str(w) for w in spec.hidden),
        "activation": spec.activation,
        "output_activation": spec.output_activation,
        "beta": repr(float(spec.beta)),
        "sigma_cv": repr(float(spec.sigma_cv)),
        "k_mc": str(spec.k_mc),
        "lambda.l2": repr(float(spec.reg.l2)),
        "lambda.gp": repr(float(spec.reg.gp)),
        "sn": "1" if spec.reg.sn else "0",
        "gp_step": repr(float(spec.reg.gp_step)),
        "sn_iters": str(spec.reg.sn_iters),
    }


def _spec_from_meta(m: dict[str, str]) -> ModelSpec:
    try:
        return ModelSpec(
            m["kind"], input_dim=int(m["input_dim"]), latent_dim=int(m["latent_dim"]),
            hidden=tuple(int(w) for w in m["hidden"].split(",") if w),
            activation=m["activation"], output_activation=m["output_activation"],
            beta=float(m["beta"]), sigma_cv=float(m["sigma_cv"]), k_mc=int(m["k_mc"]),
            reg=RegularizerConfig(float(m["lambda.l2"]), float(m["lambda.gp"]),
                                  m["sn"] == "1", float(m["gp_step"]), int(m["sn_iters"])))
    except (KeyError, ValueError) as exc:
        raise CorruptFileError(f"bad model metadata: {exc}") from exc


def autoencoder_to_container(model: Autoencoder, extra: dict | None = None) -> Container:
    net = model.net_
    meta = dict(getattr(model, "checkpoint_meta_", {}))
    meta.update({"format": "checkpoint", "spec-version": FORMAT_VERSION,
                 "item_shape": _shape_str(model.item_shape_), "seed": str(model.seed),
                 "epoch": str(getattr(model, "epoch_", len(model.history_))),
                 "dtype": str(net.dtype), **_spec_meta(net.spec)})
    meta.update({k: str(v) for k, v in (extra or {}).items()})
    return Container(meta, net.state_dict())


def autoencoder_from_container(c: Container) -> Autoencoder:
    m = c.meta
    if m.get("format") != "checkpoint":
        raise CorruptFileError("container does not hold a model checkpoint")
    spec = _spec_from_meta(m)
    est = Autoencoder(
        kind=spec.kind, latent_dim=spec.latent_dim, hidden=spec.hidden,
        activation=spec.activation, output_activation=spec.output_activation, beta=spec.beta,
        l2=spec.reg.l2, gp=spec.reg.gp, sn=spec.reg.sn, gp_step=spec.reg.gp_step,
        sn_iters=spec.reg.sn_iters, sigma_cv=spec.sigma_cv, k_mc=spec.k_mc,
        seed=int(m.get("seed", 0)), dtype=m.get("dtype", "float32"))
    est.item_shape_ = _parse_shape(m["item_shape"])
    est.net_ = AutoencoderNet(spec, np.random.default_rng(0), dtype=np.dtype(est.dtype))
    est.net_.load_state_dict(c.tensors)
    est.history_ = []
    est.epoch_ = int(m.get("epoch", 0))
    est.checkpoint_meta_ = dict(m)
    return est


def density_to_container(est) -> Container:
    if isinstance(est, IsotropicPrior):
        return Container({"format": "density", "kind": "isotropic",
                          "latent_dim": str(est.dim_)}, {})
    if isinstance(est, GaussianDensity):
        return Container({"format": "density", "kind": "gaussian",
                          "latent_dim": str(len(est.mean_)), "ridge": repr(est.ridge)},
                         {"mean": est.mean_, "cov": est.cov_})
    if isinstance(est, GaussianMixture):
        return Container({"format": "density", "kind": "gmm",
                          "latent_dim": str(est.means_.shape[1]),
                          "n_components": str(len(est.weights_)),
                          "n_iter": str(est.n_iter_),
                          "log_likelihood": repr(float(est.log_likelihood_))},
                         {"weights": est.weights_, "means": est.means_, "covs": est.covs_})
    if isinstance(est, SecondStageVAE):
        meta = {"format": "density", "kind": "2svae",
                "latent_dim": str(len(est.center_)), "seed": str(est.seed),
                **{f"net.{k}": v for k, v in _spec_meta(est.net_.spec).items()}}
        tensors = {"center": est.center_, "scale": est.scale_}
        tensors.update({f"net.{k}": v for k, v in est.net_.state_dict().items()})
        return Container(meta, tensors)
    raise TypeError(f"cannot serialize {type(est).__name__}")


def density_from_container(c: Container):
    m, t = c.meta, c.tensors
    if m.get("format") != "density":
        raise CorruptFileError("container does not hold a density estimator")
    kind = m.get("kind")
    if kind == "isotropic":
        return IsotropicPrior(int(m["latent_dim"])).fit(None)
    if kind == "gaussian":
        return GaussianDensity(float(m.get("ridge", 1e-6)))._set(
            t["mean"].astype(np.float64), t["cov"].astype(np.float64))
    if kind == "gmm":
        est = GaussianMixture(int(m["n_components"]))._set(
            t["weights"].astype(np.float64), t["means"].astype(np.float64),
            t["covs"].astype(np.float64))
        est.n_iter_ = int(m.get("n_iter", 0))
        est.log_likelihood_ = float(m.get("log_likelihood", "nan"))
        return est
    if kind == "2svae":
        spec = _spec_from_meta({k[4:]: v for k, v in m.items() if k.startswith("net.")})
        est = SecondStageVAE(hidden=spec.hidden, latent_dim=spec.latent_dim,
                             seed=int(m.get("seed", 0)))
        est.center_ = t["center"].astype(np.float64)
        est.scale_ = t["scale"].astype(np.float64)
        est.net_ = AutoencoderNet(spec, np.random.default_rng(0), dtype=np.float64)
        est.net_.load_state_dict({k[4:]: v.astype(np.float64) for k, v in t.items()
                                  if k.startswith("net.")})
        return est
    raise CorruptFileError(f"unknown density kind {kind!r}")


def save_autoencoder(path, model: Autoencoder, extra: dict | None = None) -> None:
    save_container(path, autoencoder_to_container(model, extra))


def load_autoencoder(path) -> Autoencoder:
    return autoencoder_from_container(read_container(path))


def save_density(path, est) -> None:
    save_container(path, density_to_container(est))


def load_density(path):
    return density_from_container(read_container(path))
