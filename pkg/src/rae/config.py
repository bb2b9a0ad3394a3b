"""Run configuration: ``key = value`` files with dotted section prefixes.

Example::

    seed = 3
    model.kind = RAE
    model.hidden = 512,256
    reg.l2 = 1e-6
    optim.epochs = 15
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "RAE"
    latent_dim: int = 16
    hidden: tuple = (1024, 512)
    activation: str = "relu"
    beta: float = None  # None -> per-kind default
    sigma_cv: float = 1.0
    k_mc: int = 1


@dataclass
class RegSection:
    l2: float = 0.0
    gp: float = 0.0
    sn: bool = False
    gp_step: float = 1e-2
    sn_iters: int = 1


@dataclass
class OptimSection:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 100
    patience: int = 3
    dtype: str = "float32"


@dataclass
class DensitySection:
    k: int = 10
    max_iter: int = 100
    tol: float = 1e-7
    ridge: float = 1e-6
    second_stage_epochs: int = 50


@dataclass
class EvalSection:
    features: str = "pca"
    pca_k: int = 64
    n_samples: int = 2000
    seed: int = -1  # -1 derives the eval stream from the master seed


@dataclass
class DataSection:
    source: str = "mnist"
    root: str = ""
    val_count: int = 10000
    split_seed: int = 0
    train_subset: int = 0
    val_subset: int = 0
    test_subset: int = 0
    pad: int = 32
    synthetic_n: int = 2000
    synthetic_dim: int = 16
    noise_std: float = 0.0


_CHOICES = {
    "model.kind": ("AE", "RAE", "VAE", "CVVAE"),
    "model.activation": ("relu", "tanh", "sigmoid"),
    "optim.dtype": ("float32", "float64"),
    "eval.features": ("pixels", "pca"),
    "data.source": ("mnist", "synthetic"),
}


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    reg: RegSection = field(default_factory=RegSection)
    optim: OptimSection = field(default_factory=OptimSection)
    density: DensitySection = field(default_factory=DensitySection)
    eval: EvalSection = field(default_factory=EvalSection)
    data: DataSection = field(default_factory=DataSection)

    def keys(self) -> list[str]:
        out = []
        for f in fields(self):
            if f.name == "seed":
                out.append("seed")
            else:
                out += [f"{f.name}.{g.name}" for g in fields(getattr(self, f.name))]
        return out

    def get(self, key: str):
        section, _, name = key.rpartition(".")
        return getattr(getattr(self, section) if section else self, name)

    def set(self, key: str, raw: str) -> None:
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        section, _, name = key.rpartition(".")
        target = getattr(self, section) if section else self
        default = getattr(type(target)(), name)
        value = _coerce(key, raw, default)
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(f"{key} must be one of {_CHOICES[key]}, got {value!r}")
        setattr(target, name, value)

    def validate(self) -> None:
        m, o = self.model, self.optim
        checks = [
            (m.latent_dim >= 1, "model.latent_dim must be >= 1"),
            (m.beta is None or m.beta >= 0, "model.beta must be >= 0"),
            (m.sigma_cv > 0, "model.sigma_cv must be > 0"),
            (m.k_mc >= 1, "model.k_mc must be >= 1"),
            (self.reg.l2 >= 0 and self.reg.gp >= 0, "reg weights must be >= 0"),
            (self.reg.gp_step > 0, "reg.gp_step must be > 0"),
            (self.reg.sn_iters >= 1, "reg.sn_iters must be >= 1"),
            (o.lr > 0, "optim.lr must be > 0"),
            (o.epochs >= 0, "optim.epochs must be >= 0"),
            (o.batch_size >= 1, "optim.batch_size must be >= 1"),
            (o.patience >= 1, "optim.patience must be >= 1"),
            (self.density.k >= 1, "density.k must be >= 1"),
            (self.density.max_iter >= 1, "density.max_iter must be >= 1"),
            (self.eval.n_samples >= 2, "eval.n_samples must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def dump(self) -> str:
        return "".join(f"{k} = {_format(self.get(k))}\n" for k in self.keys())


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if key == "model.kind":
            return raw.upper()
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, overrides: Iterable[str] = ()) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        cfg.set(key.strip(), value)
    cfg.validate()
    return cfg


def load_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)
