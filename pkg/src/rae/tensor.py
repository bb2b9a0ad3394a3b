"""Dense tensors with tape-based reverse-mode differentiation.

Every operation appends a node to a :class:`Graph`. Parents always precede
their children, so ``Graph.backward`` is a single reverse sweep over the tape.
Parameters enter a graph through :meth:`Graph.param` and receive their
gradients in ``Parameter.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "Graph",
    "affine",
    "activation",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "square",
    "clip",
    "concat_rows",
    "mse",
    "sum_squares",
    "AdamState",
    "adam_step",
    "Adam",
    "grad_check",
]


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward value is NaN or infinite."""


class Parameter:
    """A named trainable array with an accumulated gradient."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    param: Parameter | None = None


class Tensor:
    """Handle to a node on a graph. Arithmetic on tensors records new nodes."""

    __slots__ = ("graph", "index")
    __array_priority__ = 100

    def __init__(self, graph: "Graph", index: int):
        self.graph = graph
        self.index = index

    @property
    def data(self) -> np.ndarray:
        return self.graph.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.graph.nodes[self.index].op!r}, shape={self.shape})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.graph is not self.graph:
                raise ValueError("tensors belong to different graphs")
            return other
        return self.graph.constant(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return _add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(self._lift(other)))

    def __rsub__(self, other):
        return _add(self._lift(other), _neg(self))

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return _mul(self, self._lift(1.0 / np.asarray(other, dtype=self.dtype)))

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None) -> "Tensor":
        return _sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return _sum(self, axis) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)


class Graph:
    """Append-only tape of nodes.

    ``check_finite`` rejects NaN/Inf at every forward op. ``kinks`` collects the
    branch pattern of piecewise ops (relu, clip) so finite-difference checks can
    skip coordinates whose perturbation crosses a kink.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.check_finite = check_finite
        self.kinks: list[np.ndarray] = []
        self._param_nodes: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, parents: Sequence[Tensor], value: np.ndarray,
               backward=None, param: Parameter | None = None) -> Tensor:
        idx = tuple(p.index for p in parents)
        n = len(self.nodes)
        assert all(i < n for i in idx), "parent must precede node"
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {op!r}")
        self.nodes.append(_Node(op, idx, value, backward, param))
        return Tensor(self, n)

    def constant(self, value) -> Tensor:
        return self.record("const", (), np.asarray(value))

    def param(self, p: Parameter) -> Tensor:
        """Leaf node for ``p``. Repeated calls on one graph return the same node."""
        key = id(p)
        if key not in self._param_nodes:
            t = self.record("param", (), p.value, param=p)
            self._param_nodes[key] = t.index
        return Tensor(self, self._param_nodes[key])

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every reachable ``Parameter.grad``."""
        if loss.graph is not self:
            raise ValueError("loss belongs to a different graph")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.data)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient at node {i} ({node.op})")
            if node.param is not None:
                node.param.grad += g
            if node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return a.graph.record(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def _neg(a: Tensor) -> Tensor:
    return a.graph.record("neg", (a,), -a.data, lambda g: (-g,))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    return a.graph.record(
        "mul", (a, b), x * y,
        lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.data, b.data
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
    return a.graph.record("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def _sum(a: Tensor, axis) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.graph.record("sum", (a,), np.asarray(a.data.sum(axis=axis)), back)


def _reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return a.graph.record("reshape", (a,), a.data.reshape(shape),
                          lambda g: (g.reshape(old),))


def _getitem(a: Tensor, key) -> Tensor:
    shape, dtype = a.shape, a.dtype

    fancy = any(isinstance(k, (np.ndarray, list))
                for k in (key if isinstance(key, tuple) else (key,)))

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(out, key, g)
        else:
            out[key] = g
        return (out,)

    return a.graph.record("getitem", (a,), a.data[key], back)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along the batch axis."""
    graph = parts[0].graph
    sizes = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[sizes[i]:sizes[i + 1]] for i in range(len(parts)))

    return graph.record("concat", tuple(parts),
                        np.concatenate([p.data for p in parts], axis=0), back)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n, a), ``W`` (a, b), ``b`` (b,)."""
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[-1]:
        raise ValueError(f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    xv, Wv = x.data, W.data
    return x.graph.record(
        "affine", (x, W, b), xv @ Wv + b.data,
        lambda g: (g @ Wv.T, xv.T @ g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    x.graph.kinks.append(mask)
    return x.graph.record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype),
                          lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return x.graph.record("tanh", (x,), y, lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    # numerically stable on both tails
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return x.graph.record("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return x.graph.record("exp", (x,), y, lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    v = x.data
    return x.graph.record("square", (x,), v * v, lambda g: (2 * g * v,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero outside ``[lo, hi]``."""
    inside = (x.data >= lo) & (x.data <= hi)
    x.graph.kinks.append(inside)
    return x.graph.record("clip", (x,), np.clip(x.data, lo, hi),
                          lambda g: (g * inside,))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid,
                "linear": lambda x: x}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def sum_squares(x: Tensor) -> Tensor:
    return square(x).sum()


def mse(x: Tensor, y: Tensor) -> Tensor:
    """Squared error summed over features and averaged over the batch axis."""
    if x.shape != y.shape:
        raise ValueError(f"mse shape mismatch: {x.shape} vs {y.shape}")
    n = x.shape[0] if x.data.ndim > 1 else 1
    return square(x - y).sum() * (1.0 / n)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **kw) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params],
                   [np.zeros_like(p.value) for p in params], **kw)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """One Adam update in place. Gradients are left for the caller to zero."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.value -= step.astype(p.value.dtype, copy=False)


class Adam:
    """Thin stateful wrapper over :func:`adam_step`."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, **kw):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params, **kw)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr)


def grad_check(loss_fn: Callable[[Graph], Tensor], params: Iterable[Parameter],
               h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` builds a scalar loss on the graph it is given. When
    ``max_coords`` is set, a random subset of that many coordinates per
    parameter is compared. Coordinates whose +/-h perturbation changes the
    branch of any relu or clip are skipped.
    """
    params = list(params)
    for p in params:
        if p.value.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit parameters")
        p.zero_grad()
    g = Graph()
    loss = loss_fn(g)
    g.backward(loss)
    base_kinks = g.kinks

    def evaluate():
        gg = Graph(check_finite=False)
        val = float(loss_fn(gg).data)
        same = len(gg.kinks) == len(base_kinks) and all(
            np.array_equal(a, b) for a, b in zip(gg.kinks, base_kinks))
        return val, same

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1).copy()
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp, ok_p = evaluate()
            flat[c] = orig - h
            fm, ok_m = evaluate()
            flat[c] = orig
            if not (ok_p and ok_m):
                continue
            numeric = (fp - fm) / (2 * h)
            a = analytic[c]
            scale = max(abs(a), abs(numeric))
            diff = abs(a - numeric)
            if scale < 1e-7:
                err = 0.0 if diff < 1e-9 else diff / 1e-7
            else:
                err = diff / scale
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
