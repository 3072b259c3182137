"""Dense float64 tensors with a reverse-mode tape, plus Adam and seeded sampling.

The graph is built dynamically: every op that touches a grad-requiring tensor
records (parent, vjp) back-references on its output. ``grad_of`` replays those
records in reverse topological order. Values are immutable once created, so
disjoint graphs can be evaluated concurrently; a single training loop is
plainly sequential and deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or Inf entered the graph."""


def _as_array(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value entering the graph")
    return arr


class Tensor:
    """Row-major float64 array, optionally recorded on the reverse-mode tape."""

    __slots__ = ("data", "grad", "requires_grad", "backrefs", "name")

    def __init__(self, data, requires_grad=False, backrefs=(), name=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in backrefs)
        # back-references are only kept where a gradient can flow
        self.backrefs = tuple((p, fn) for p, fn in backrefs if p.requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- arithmetic ----

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---- primitive ops ----


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return Tensor(
        a.data + b.data,
        backrefs=(
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ),
    )


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product; accepts a plain scalar for b."""
    a = _ensure(a)
    b = _ensure(b)
    return Tensor(
        a.data * b.data,
        backrefs=(
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ),
    )


def scale(a, c: float) -> Tensor:
    a = _ensure(a)
    c = float(c)
    return Tensor(a.data * c, backrefs=((a, lambda g: g * c),))


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}")
    return Tensor(
        a.data @ b.data,
        backrefs=(
            (a, lambda g: g @ b.data.T),
            (b, lambda g: a.data.T @ g),
        ),
    )


def transpose(a) -> Tensor:
    a = _ensure(a)
    return Tensor(a.data.T, backrefs=((a, lambda g: g.T),))


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    old = a.data.shape
    return Tensor(a.data.reshape(shape), backrefs=((a, lambda g: g.reshape(old)),))


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _ensure(a)
    if a.data.ndim != 2:
        raise ValueError("slice_cols expects a 2-d tensor")

    def back(g, shape=a.data.shape, start=start, stop=stop):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return full

    return Tensor(np.ascontiguousarray(a.data[:, start:stop]), backrefs=((a, back),))


def concat(a, b, axis: int = 0) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    na = a.data.shape[axis]

    def back_a(g, na=na, axis=axis):
        return np.take(g, range(na), axis=axis)

    def back_b(g, na=na, axis=axis):
        return np.take(g, range(na, g.shape[axis]), axis=axis)

    return Tensor(np.concatenate([a.data, b.data], axis=axis),
                  backrefs=((a, back_a), (b, back_b)))


def mean(a) -> Tensor:
    a = _ensure(a)
    n = a.data.size
    return Tensor(
        a.data.mean(),
        backrefs=((a, lambda g: np.full(a.data.shape, np.asarray(g).item() / n)),),
    )


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax (row max subtracted before exp)."""
    a = _ensure(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    y = softmax_np(a.data, axis)

    def back(g, y=y, axis=axis):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (g - dot) * y

    return Tensor(y, backrefs=((a, back),))


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(q, k, v) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v for 2-d q, k, v."""
    q, k, v = _ensure(q), _ensure(k), _ensure(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ValueError("attention expects 2-d q, k, v")
    if q.data.shape[1] != k.data.shape[1]:
        raise ValueError(f"query/key widths disagree: {q.data.shape} vs {k.data.shape}")
    if k.data.shape[0] != v.data.shape[0]:
        raise ValueError(f"key/value counts disagree: {k.data.shape} vs {v.data.shape}")
    d = q.data.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def attention_np(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched plain-numpy twin of ``attention`` (leading axes broadcast)."""
    d = q.shape[-1]
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(d)
    return np.matmul(softmax_np(scores, axis=-1), v)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu(a) -> Tensor:
    a = _ensure(a)
    x = a.data

    def back(g, x=x):
        t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
        dt = (1.0 - t**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return g * (0.5 * (1.0 + t) + 0.5 * x * dt)

    return Tensor(gelu_np(x), backrefs=((a, back),))


def layer_norm_np(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, xhat, inv


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned affine."""
    a, gain, bias = _ensure(a), _ensure(gain), _ensure(bias)
    y, xhat, inv = layer_norm_np(a.data, gain.data, bias.data, eps)
    n = a.data.shape[-1]

    def back_x(g, xhat=xhat, inv=inv, n=n, gd=gain.data):
        gy = g * gd
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        return (gy - m1 - xhat * m2) * inv

    def back_gain(g, xhat=xhat, shape=gain.data.shape):
        return _unbroadcast(g * xhat, shape)

    def back_bias(g, shape=bias.data.shape):
        return _unbroadcast(g, shape)

    return Tensor(y, backrefs=((a, back_x), (gain, back_gain), (bias, back_bias)))


def mse(pred, target) -> Tensor:
    diff = _ensure(pred) - _ensure(target)
    return mean(mul(diff, diff))


# ---- parameter graph and reverse pass ----


class Graph:
    """Ordered op records accumulate implicitly on tensors; this object names
    the parameter leaves so gradients can be returned per parameter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, array) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        leaf = Tensor(array, requires_grad=True, name=name)
        self.params[name] = leaf
        return leaf

    def param_dict(self, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.param(name, arr) for name, arr in arrays.items()}


def grad_of(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter leaf of ``graph``.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")

    # iterative post-order topological sort over the recorded back-references
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.backrefs:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.backrefs:
            contrib = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = contrib if acc is None else acc + contrib

    out = {}
    for name, leaf in graph.params.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.data) if g is None else g
    return out


# ---- Adam ----


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected adaptive-moment update. Returns fresh arrays."""
    state.t += 1
    t = state.t
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        new_params[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new_params, state


# ---- deterministic sampling and the time embedding ----


class Rng:
    """Seeded standard-normal (and friends) stream with documented substream
    derivation: child streams are keyed by integer tuples, so parallel
    per-item work cannot change aggregate results."""

    def __init__(self, seed):
        self._seed = seed
        self._gen = np.random.default_rng(seed)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def choice(self, options, size=None, replace=True):
        return self._gen.choice(options, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @staticmethod
    def child(seed, *keys: int) -> "Rng":
        return Rng([int(seed), *[int(k) for k in keys]])


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of an integer timestep."""
    if dim % 2 != 0:
        raise ValueError("time embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])
