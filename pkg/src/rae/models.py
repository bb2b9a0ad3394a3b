"""MLP encoder/decoder pairs and the AE / RAE / VAE / CV-VAE objectives."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .regularizers import PowerIterState, RegularizerConfig, assemble, spectral_normalize
from .tensor import Graph, NonFiniteError, Parameter, Tensor

__all__ = [
    "KINDS",
    "ModelSpec",
    "MLP",
    "AutoencoderNet",
    "EncoderOutput",
    "LossBreakdown",
    "EpochRecord",
    "TrainingDiverged",
    "encode",
    "decode",
    "reparam_sample",
    "cv_encode",
    "kl_closed_form",
    "loss",
    "train",
]

log = logging.getLogger(__name__)

KINDS = ("AE", "RAE", "VAE", "CVVAE")
DEFAULT_BETA = {"AE": 0.0, "RAE": 1e-3, "CVVAE": 1e-3, "VAE": 1.0}
LOG_VAR_CLIP = 20.0


@dataclass
class ModelSpec:
    kind: str
    input_dim: int
    latent_dim: int = 16
    hidden: tuple[int, ...] = (1024, 512)
    activation: str = "relu"
    output_activation: str = "sigmoid"
    beta: float | None = None
    sigma_cv: float = 1.0
    k_mc: int = 1
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)

    def __post_init__(self):
        self.kind = self.kind.upper()
        self.hidden = tuple(int(w) for w in self.hidden)
        if self.beta is None:
            self.beta = DEFAULT_BETA.get(self.kind, 0.0)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ValueError("input_dim and latent_dim must be >= 1")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.kind == "CVVAE" and not self.sigma_cv > 0:
            raise ValueError("sigma_cv must be positive for CVVAE")
        if self.k_mc < 1:
            raise ValueError("k_mc must be >= 1")

    @property
    def encoder_out(self) -> int:
        # VAE encoders emit mean and log-variance side by side
        return 2 * self.latent_dim if self.kind == "VAE" else self.latent_dim

    @property
    def label(self) -> str:
        reg = self.reg.label
        return f"{self.kind}-{reg}" if reg else self.kind


class MLP:
    """Stack of affine layers with a shared hidden activation."""

    def __init__(self, sizes: Sequence[int], activation: str = "relu",
                 output_activation: str = "linear", rng: np.random.Generator | None = None,
                 dtype=np.float32, prefix: str = ""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = tuple(sizes)
        self.activation = activation
        self.output_activation = output_activation
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 2.0 if activation == "relu" else 1.0
            W = rng.standard_normal((a, b)) * math.sqrt(gain / a)
            self.weights.append(Parameter(W.astype(dtype), f"{prefix}W{i}"))
            self.biases.append(Parameter(np.zeros(b, dtype=dtype), f"{prefix}b{i}"))

    def parameters(self) -> list[Parameter]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def weight_nodes(self, g: Graph, scales: Sequence[float] | None = None) -> list[Tensor]:
        nodes = [g.param(W) for W in self.weights]
        if scales is not None:
            nodes = [w * (1.0 / s) for w, s in zip(nodes, scales)]
        return nodes

    def forward(self, x: Tensor, weights: Sequence[Tensor] | None = None) -> Tensor:
        g = x.graph
        if weights is None:
            weights = self.weight_nodes(g)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(weights, self.biases)):
            x = T.affine(x, W, g.param(b))
            x = T.activation(x, self.output_activation if i == last else self.activation)
        return x


class AutoencoderNet:
    """Encoder, decoder and spectral-norm state for one :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        enc_sizes = (spec.input_dim, *spec.hidden, spec.encoder_out)
        dec_sizes = (spec.latent_dim, *reversed(spec.hidden), spec.input_dim)
        self.encoder = MLP(enc_sizes, spec.activation, "linear", rng, dtype, "enc.")
        self.decoder = MLP(dec_sizes, spec.activation, spec.output_activation, rng,
                           dtype, "dec.")
        self.sn_state = PowerIterState.init([W.shape for W in self.decoder.weights], rng)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value.copy() for p in self.parameters()}
        if self.spec.reg.sn:
            for k, u in enumerate(self.sn_state.u):
                out[f"sn.u{k}"] = u.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"missing tensor {p.name!r}")
            v = np.asarray(state[p.name])
            if v.shape != p.shape:
                raise ValueError(f"tensor {p.name!r} has shape {v.shape}, expected {p.shape}")
            p.value[...] = v
        for k in range(len(self.sn_state.u)):
            if f"sn.u{k}" in state:
                self.sn_state.u[k] = np.asarray(state[f"sn.u{k}"], dtype=np.float64).copy()

    def decoder_weights(self, g: Graph, train: bool = False) -> list[Tensor]:
        if not self.spec.reg.sn:
            return self.decoder.weight_nodes(g)
        raw = [W.value for W in self.decoder.weights]
        _, scales = spectral_normalize(raw, self.sn_state, self.spec.reg.sn_iters,
                                       update=train)
        return self.decoder.weight_nodes(g, scales)


@dataclass
class EncoderOutput:
    mu: Tensor
    log_var: Tensor | None = None


@dataclass
class LossBreakdown:
    rec: float
    latent: float
    reg: float
    total: float
    reg_terms: dict[str, float] = field(default_factory=dict)
    node: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {"rec": self.rec, "latent": self.latent, "reg": self.reg, "total": self.total}


def _as_input(g: Graph, x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return g.constant(np.asarray(x, dtype=dtype))


def encode(model: AutoencoderNet, x) -> EncoderOutput:
    """Deterministic encoder map. ``x`` is a Tensor or an (n, input_dim) array."""
    g = x.graph if isinstance(x, Tensor) else Graph()
    x = _as_input(g, x, model.dtype)
    if x.shape[-1] != model.spec.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, model expects "
                         f"{model.spec.input_dim}")
    h = model.encoder.forward(x)
    if model.spec.kind != "VAE":
        return EncoderOutput(h)
    d = model.spec.latent_dim
    return EncoderOutput(h[:, :d], T.clip(h[:, d:], -LOG_VAR_CLIP, LOG_VAR_CLIP))


def decode(model: AutoencoderNet, z, train: bool = False) -> Tensor:
    g = z.graph if isinstance(z, Tensor) else Graph()
    z = _as_input(g, z, model.dtype)
    return model.decoder.forward(z, model.decoder_weights(g, train))


def reparam_sample(out: EncoderOutput, noise: np.ndarray) -> Tensor:
    """``mu + exp(log_var / 2) * noise``."""
    if out.log_var is None:
        raise ValueError("reparametrization needs a log-variance head (VAE only)")
    noise = np.asarray(noise, dtype=out.mu.dtype)
    if noise.shape != out.mu.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {out.mu.shape}")
    std = T.exp(out.log_var * 0.5)
    return out.mu + std * noise


def cv_encode(model: AutoencoderNet, x, noise: np.ndarray) -> Tensor:
    """Constant-variance encoder: ``mu(x) + sigma_cv * noise``."""
    if model.spec.kind != "CVVAE":
        raise ValueError("cv_encode requires a CVVAE model")
    mu = encode(model, x).mu
    noise = np.asarray(noise, dtype=mu.dtype)
    if noise.shape != mu.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {mu.shape}")
    return mu + noise * model.spec.sigma_cv


def kl_closed_form(mu: Tensor, log_var: Tensor) -> Tensor:
    """Batch-mean KL(N(mu, exp(log_var)) || N(0, I))."""
    if mu.shape != log_var.shape:
        raise ValueError("mu and log_var shapes differ")
    n = mu.shape[0]
    per = T.square(mu) + T.exp(log_var) - log_var - 1.0
    return per.sum() * (0.5 / n)


def _half_sq_norm(z: Tensor) -> Tensor:
    return T.sum_squares(z) * (0.5 / z.shape[0])


def loss(model: AutoencoderNet, x, rng: np.random.Generator | None = None,
         graph: Graph | None = None, train: bool = False) -> LossBreakdown:
    """Objective for one batch.

    ``total = rec + beta * latent + reg`` where ``reg`` is the weighted sum of
    the active additive penalties. The graph node for ``total`` is returned in
    ``LossBreakdown.node`` for backpropagation.
    """
    spec = model.spec
    g = graph if graph is not None else Graph()
    x = _as_input(g, x, model.dtype)
    n = x.shape[0]
    d = spec.latent_dim
    dec_w = model.decoder_weights(g, train)

    def dec(z):
        return model.decoder.forward(z, dec_w)

    out = encode(model, x)
    if spec.kind == "VAE":
        if rng is None:
            raise ValueError("VAE loss needs an rng for the reparametrization noise")
        k = spec.k_mc
        noise = rng.standard_normal((k, n, d))
        draws = [reparam_sample(out, noise[j]) for j in range(k)]
        zs = draws[0] if k == 1 else T.concat_rows(draws)
        target = x if k == 1 else g.constant(np.tile(x.data, (k, 1)))
        rec = T.mse(dec(zs), target)
        latent = kl_closed_form(out.mu, out.log_var)
        z_reg = out.mu
    elif spec.kind == "CVVAE":
        if rng is None:
            raise ValueError("CVVAE loss needs an rng for the encoder noise")
        z = out.mu + rng.standard_normal((n, d)).astype(model.dtype) * spec.sigma_cv
        rec = T.mse(dec(z), x)
        latent = _half_sq_norm(out.mu)
        z_reg = z
    else:
        z = out.mu
        rec = T.mse(dec(z), x)
        latent = _half_sq_norm(z) if spec.kind == "RAE" else None
        z_reg = z

    terms = assemble(spec.reg, dec, dec_w, z_reg)
    total = rec
    if latent is not None and spec.beta > 0:
        total = total + latent * spec.beta
    reg_node = None
    for _, lam, node in terms:
        reg_node = node * lam if reg_node is None else reg_node + node * lam
    if reg_node is not None:
        total = total + reg_node

    br = LossBreakdown(
        rec=float(rec.data),
        latent=float(latent.data) if latent is not None else 0.0,
        reg=float(reg_node.data) if reg_node is not None else 0.0,
        total=float(total.data),
        reg_terms={name: float(node.data) for name, _, node in terms},
        node=total,
    )
    if not all(math.isfinite(v) for v in br.as_dict().values()):
        raise NonFiniteError(f"non-finite loss: {br.as_dict()}")
    return br


def reconstruct(model: AutoencoderNet, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    """Decode the encoder mean; no noise for any model kind."""
    out = []
    for i in range(0, len(x), batch_size):
        g = Graph()
        mu = encode(model, g.constant(np.asarray(x[i:i + batch_size], model.dtype))).mu
        out.append(decode(model, mu).data)
    return np.concatenate(out) if out else np.zeros((0, model.spec.input_dim), model.dtype)


def latents(model: AutoencoderNet, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = [encode(model, np.asarray(x[i:i + batch_size], model.dtype)).mu.data
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.latent_dim), model.dtype)


def decode_array(model: AutoencoderNet, z: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = [decode(model, np.asarray(z[i:i + batch_size], model.dtype)).data
           for i in range(0, len(z), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.input_dim), model.dtype)


@dataclass
class EpochRecord:
    epoch: int
    rec: float
    latent: float
    reg: float
    total: float
    val_total: float
    val_rec: float
    lr: float

    FIELDS = ("epoch", "rec", "latent", "reg", "total", "val_total", "val_rec", "lr")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


class TrainingDiverged(RuntimeError):
    """Loss went non-finite. The model holds the last good parameters."""

    def __init__(self, msg: str, history: list[EpochRecord]):
        super().__init__(msg)
        self.history = history


def evaluate(model: AutoencoderNet, x: np.ndarray, seed: int, batch_size: int = 1000):
    """(mean objective with fixed noise, mean deterministic reconstruction error)."""
    rng = np.random.default_rng(seed)
    tot = rec = 0.0
    for i in range(0, len(x), batch_size):
        xb = np.asarray(x[i:i + batch_size], model.dtype)
        tot += loss(model, xb, rng).total * len(xb)
        r = reconstruct(model, xb)
        rec += float(np.sum((r.astype(np.float64) - xb) ** 2))
    return tot / len(x), rec / len(x)


def train(model: AutoencoderNet, x_train: np.ndarray, x_val: np.ndarray | None = None,
          epochs: int = 100, lr: float = 1e-3, batch_size: int = 100, patience: int = 3,
          shuffle_rng: np.random.Generator | None = None,
          noise_rng: np.random.Generator | None = None,
          callback: Callable[[EpochRecord], None] | None = None) -> list[EpochRecord]:
    """Adam with learning-rate halving on validation plateaus.

    A plateau is ``patience`` consecutive epochs without a relative improvement
    above 1e-4 in validation objective. On return the model holds the
    parameters of the best validation epoch (the initial ones if no epoch ran).
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    shuffle_rng = shuffle_rng if shuffle_rng is not None else np.random.default_rng(0)
    noise_rng = noise_rng if noise_rng is not None else np.random.default_rng(1)
    x_train = np.asarray(x_train, model.dtype)
    x_val = x_train if x_val is None or len(x_val) == 0 else np.asarray(x_val, model.dtype)
    params = model.parameters()
    state = T.AdamState.for_params(params)
    val_seed = int(noise_rng.integers(2**63))

    best = model.state_dict()
    best_val = math.inf
    since_improve = 0
    history: list[EpochRecord] = []
    n = len(x_train)
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        for i in range(0, n, batch_size):
            xb = x_train[order[i:i + batch_size]]
            for p in params:
                p.zero_grad()
            g = Graph()
            try:
                br = loss(model, xb, noise_rng, graph=g, train=True)
                g.backward(br.node)
            except NonFiniteError as exc:
                model.load_state_dict(best)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            T.adam_step(params, state, lr)
            sums += np.array([br.rec, br.latent, br.reg, br.total]) * len(xb)
        sums /= n
        try:
            val_total, val_rec = evaluate(model, x_val, val_seed)
        except NonFiniteError as exc:
            model.load_state_dict(best)
            raise TrainingDiverged(f"epoch {epoch} validation: {exc}", history) from exc
        rec = EpochRecord(epoch, *map(float, sums), val_total, val_rec, lr)
        history.append(rec)
        log.info("epoch %d total=%.5g val=%.5g lr=%.3g", epoch, rec.total, val_total, lr)
        if callback is not None:
            callback(rec)
        if val_total < best_val - 1e-4 * abs(best_val) or not math.isfinite(best_val):
            best_val = val_total
            best = model.state_dict()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= patience:
                lr *= 0.5
                since_improve = 0
    model.load_state_dict(best)
    return history
