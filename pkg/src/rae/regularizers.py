"""Explicit decoder regularizers: weight decay, gradient penalty, spectral norm."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, concat_rows, sum_squares

__all__ = [
    "RegularizerConfig",
    "PowerIterState",
    "l2_penalty",
    "grad_penalty",
    "power_iteration",
    "spectral_normalize",
    "assemble",
]

_S_FLOOR = np.finfo(np.float64).eps


@dataclass
class RegularizerConfig:
    """Active decoder regularizers and their weights.

    A zero weight disables L2 or GP. SN is a forward-pass reparametrization
    and has no weight.
    """

    l2: float = 0.0
    gp: float = 0.0
    sn: bool = False
    gp_step: float = 1e-2
    sn_iters: int = 1

    def __post_init__(self):
        if self.l2 < 0 or self.gp < 0:
            raise ValueError("regularizer weights must be non-negative")
        if not self.gp_step > 0:
            raise ValueError("gp_step must be positive")
        if self.sn_iters < 1:
            raise ValueError("sn_iters must be >= 1")

    @property
    def active(self) -> list[str]:
        out = []
        if self.l2 > 0:
            out.append("L2")
        if self.gp > 0:
            out.append("GP")
        if self.sn:
            out.append("SN")
        return out

    @property
    def label(self) -> str:
        return "-".join(self.active)


@dataclass
class PowerIterState:
    """Persistent left singular vector estimate per weight matrix."""

    u: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, shapes: Sequence[tuple[int, int]], rng: np.random.Generator):
        us = []
        for rows, _ in shapes:
            u = rng.standard_normal(rows)
            us.append(u / np.linalg.norm(u))
        return cls(us)


def l2_penalty(weights: Sequence[Tensor]) -> Tensor:
    """Sum of squared entries over the given (decoder) weight matrices."""
    total = sum_squares(weights[0])
    for w in weights[1:]:
        total = total + sum_squares(w)
    return total


def grad_penalty(decoder: Callable[[Tensor], Tensor], z: Tensor, h: float) -> Tensor:
    """Batch-mean squared Frobenius norm of the decoder Jacobian at ``z``.

    Each Jacobian column is a central difference
    ``(D(z + h e_i) - D(z - h e_i)) / 2h``. All 2d perturbed batches go
    through the decoder in one pass, so parameter gradients come from the
    ordinary reverse sweep.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    n, d = z.shape
    offsets = np.zeros((2 * d, d), dtype=z.dtype)
    for i in range(d):
        offsets[2 * i, i] = h
        offsets[2 * i + 1, i] = -h
    stacked = concat_rows([z + offsets[j] for j in range(2 * d)])
    out = decoder(stacked)
    out = out.reshape(d, 2, n, out.shape[-1])
    cols = out[:, 0] - out[:, 1]
    return sum_squares(cols) * (1.0 / (4 * h * h * n))


def power_iteration(W: np.ndarray, u: np.ndarray, iters: int):
    """Run ``iters`` power steps from ``u``; returns (s, u, v)."""
    W = np.asarray(W, dtype=np.float64)
    v = None
    s = 0.0
    for _ in range(iters):
        v = W.T @ u
        nv = np.linalg.norm(v)
        if nv < _S_FLOOR:
            return 0.0, u, np.zeros(W.shape[1])
        v = v / nv
        wu = W @ v
        nu = np.linalg.norm(wu)
        if nu < _S_FLOOR:
            return 0.0, u, v
        u = wu / nu
        s = float(u @ W @ v)
    return s, u, v


def spectral_normalize(weights: Sequence[np.ndarray], state: PowerIterState,
                       iters: int = 1, update: bool = True):
    """Divide each matrix by its power-method estimate of the top singular value.

    Returns ``(normalized, scales)``. With ``update=False`` the stored vectors
    are used as-is (inference) and the state is left untouched. A matrix whose
    estimate falls below machine epsilon passes through unchanged with scale 1.
    """
    if len(state.u) != len(weights):
        raise ValueError("power-iteration state does not match weight list")
    normalized, scales = [], []
    for k, W in enumerate(weights):
        if update:
            s, u, _ = power_iteration(W, state.u[k], iters)
            state.u[k] = u
        else:
            s = float(np.linalg.norm(np.asarray(W, dtype=np.float64).T @ state.u[k]))
        if s < _S_FLOOR:
            s = 1.0
        scales.append(s)
        normalized.append(W / np.asarray(s, dtype=W.dtype))
    return normalized, scales


def assemble(config: RegularizerConfig, decoder: Callable[[Tensor], Tensor],
             weights: Sequence[Tensor], z: Tensor) -> list[tuple[str, float, Tensor]]:
    """Additive penalty terms as ``(name, weight, node)``; SN contributes none."""
    terms = []
    if config.l2 > 0:
        terms.append(("L2", config.l2, l2_penalty(weights)))
    if config.gp > 0:
        terms.append(("GP", config.gp, grad_penalty(decoder, z, config.gp_step)))
    return terms
