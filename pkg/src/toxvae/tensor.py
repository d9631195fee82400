"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

Operations executed while a :class:`Tape` is active (``with Tape() as tape:``)
and touching at least one tensor that requires gradients are appended to the
tape.  ``tape.backward(loss)`` walks the tape once, newest node first.
Outside a tape the same functions just compute values.

Broadcasting is limited to adding a 1-D row vector (bias) to a matrix and to
scalar operands.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


def _tapes() -> list["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "Tape | None":
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, node={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


class Parameter(Tensor):
    """A trainable leaf.  Frozen parameters never receive gradients or updates."""

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen, name=name)
        self._frozen = frozen

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)

    def record(self, op, out, inputs, backward) -> None:
        out.node_id = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(_Node(op, out, inputs, backward))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` keyed by ``id(tensor)``."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.node_id is None:
            return grads
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig
        return grads

    def gradients(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self.backward(loss)
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, out, inputs, backward)
    return out


# --------------------------------------------------------------------------
# core ops


def _bias_compatible(a: Tensor, b: Tensor) -> bool:
    return b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g))
    if _bias_compatible(a, b):
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if _bias_compatible(b, a):
        return _result("add", a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    if b.data.ndim == 0:
        return _result("add", a.data + b.data, (a, b), lambda g: (g, g.sum()))
    if a.data.ndim == 0:
        return _result("add", a.data + b.data, (a, b), lambda g: (g.sum(), g))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b) -> Tensor:
    return add(a, mul(as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    if b.data.ndim == 0:
        return _result("mul", a.data * b.data, (a, b), lambda g: (g * b.data, (g * a.data).sum()))
    if a.data.ndim == 0:
        return _result("mul", a.data * b.data, (a, b), lambda g: ((g * b.data).sum(), g * a.data))
    raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])]

    return _result("concat", data, tensors, backward)


def slice_(a: Tensor, index) -> Tensor:
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result("slice", np.array(data), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _result("exp", e, (a,), lambda g: (g * e,))


def square(a: Tensor) -> Tensor:
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of a matrix (or of a single vector)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result("softmax", p, (a,), backward)


def sum_(a: Tensor) -> Tensor:
    return _result("sum", np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result("mean", np.array(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),))


def mask_select(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise choice: rows where ``mask`` is true come from ``a``, others from ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"mask_select: {a.shape} vs {b.shape}")
    m = np.asarray(mask, dtype=bool).reshape(-1, *([1] * (a.data.ndim - 1)))
    return _result("mask_select", np.where(m, a.data, b.data), (a, b),
                   lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result("take_rows", table.data[ids], (table,), backward)


# --------------------------------------------------------------------------
# losses and sampling


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean over masked rows of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ValueError(f"target id out of range [0, {v})")
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross-entropy mask selects no positions")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    nll = logsumexp - shifted[np.arange(n), targets]
    loss = nll[mask].sum() / count

    def backward(g):
        p = np.exp(shifted - logsumexp[:, None])
        p[np.arange(n), targets] -= 1.0
        p[~mask] = 0.0
        return (g * p / count,)

    return _result("softmax_cross_entropy", np.array(loss), (logits,), backward)


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over dims; batch rows are averaged."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl: {mu.shape} vs {logvar.shape}")
    ev = np.exp(logvar.data)
    terms = 1.0 + logvar.data - mu.data ** 2 - ev
    rows = 1 if mu.data.ndim == 1 else mu.shape[0]
    value = -0.5 * terms.sum() / rows + 0.0  # no negative zero
    return _result("kl_diag_gaussian", np.array(value), (mu, logvar),
                   lambda g: (g * mu.data / rows, g * 0.5 * (ev - 1.0) / rows))


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size
    return _result("mse", np.array((diff ** 2).mean()), (pred,), lambda g: (g * 2.0 * diff / n,))


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """``mu + exp(logvar / 2) * eps`` with eps ~ N(0, I); eps carries no gradient."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"reparameterize: {mu.shape} vs {logvar.shape}")
    eps = rng.standard_normal(mu.shape)
    return add(mu, mul(exp(mul(logvar, 0.5)), Tensor(eps)))


def inject_noise(z: Tensor, sigma: float, rng: np.random.Generator) -> Tensor:
    """``z + eps`` with eps ~ N(0, sigma^2 I).  ``sigma == 0`` returns ``z`` itself."""
    if sigma == 0:
        return z
    return add(z, Tensor(sigma * rng.standard_normal(z.shape)))


# --------------------------------------------------------------------------
# layers


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


@dataclass
class GRUParams:
    """Input/hidden projections with gates stacked as [reset | update | candidate]."""

    w_ih: Parameter  # (input, 3*hidden)
    w_hh: Parameter  # (hidden, 3*hidden)
    b_ih: Parameter  # (3*hidden,)
    b_hh: Parameter  # (3*hidden,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]


def gru_cell(x: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell: batch of x {x.shape} and h {h.shape} differ")
    hd = p.hidden
    gi = dense(x, p.w_ih, p.b_ih)
    gh = dense(h, p.w_hh, p.b_hh)
    r = sigmoid(add(gi[:, :hd], gh[:, :hd]))
    z = sigmoid(add(gi[:, hd : 2 * hd], gh[:, hd : 2 * hd]))
    n = tanh(add(gi[:, 2 * hd :], mul(r, gh[:, 2 * hd :])))
    # (1 - z) * n + z * h
    return add(n, mul(z, sub(h, n)))


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        return cls(
            **hyper,
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
        )


def adam_update(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam step, in place.  Frozen parameters are skipped."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeError("Adam state, parameters and gradients differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"Adam: parameter {p.name} {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if getattr(p, "frozen", False):
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


# --------------------------------------------------------------------------
# finite differences


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to entries of ``x``.

    ``indices`` restricts the probe to the given flat indices.
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx)) if indices is not None else np.zeros(flat.size)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out if indices is not None else out.reshape(x.shape)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4) -> list[float]:
    """Relative error between tape gradients and central differences, per input."""
    for t in inputs:
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    analytic = tape.gradients(loss, inputs)
    return [relative_error(a, numeric_gradient(fn, t, h)) for a, t in zip(analytic, inputs)]
