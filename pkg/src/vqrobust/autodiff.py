"""Minimal reverse-mode autodiff on numpy buffers.

Define-by-run: every op builds a fresh output node holding references to its
parents and a closure that routes the output gradient to them. `backward()`
walks the recorded graph once in reverse topological order. Two dtypes are
supported: float32 for training and attacks, float64 for finite-difference
gradient checking. Ops never mutate their inputs' buffers, and every op
output is checked for NaN/Inf (a hard error by contract).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-d array node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        _check_finite("tensor", self.data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape} (op {self._op})"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Backpropagate from a scalar loss; leaf grads accumulate."""
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones((), dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise FloatingPointError(f"non-finite gradient at op '{node._op}'")

    # operator sugar; scalars become constant 0-d tensors of matching dtype
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op!r})"


def backward(loss: Tensor) -> None:
    """Module-level alias for Tensor.backward."""
    loss.backward()


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of op '{op}'")


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValueError(f"op '{op}' mixes dtypes {dt} and {t.data.dtype}")


def _node(op: str, data: np.ndarray, parents: tuple, bw) -> Tensor:
    data = np.asarray(data)
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(p for p in parents if p.requires_grad)
    out._backward = bw if out.requires_grad else None
    out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _broadcastable(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"op '{op}': shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("add", a, b)
    _broadcastable("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("sub", a, b)
    _broadcastable("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node("sub", a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    _broadcastable("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node("mul", a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"op 'matmul': operands must be >= 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"op 'matmul': inner dims of {a.shape} and {b.shape} do not match")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node("matmul", a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _node("reshape", a.data.reshape(shape).copy(), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _node("transpose", np.transpose(a.data, axes).copy(), (a,), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(a.shape, dtype=a.data.dtype)
        full[idx] = g
        a._accumulate(full)

    return _node("slice", a.data[idx].copy(), (a,), bw)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    _check_dtypes("concat", *tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def relu(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g * (a.data > 0))

    return _node("relu", np.maximum(a.data, 0), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _node("tanh", out_data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype)

    def bw(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _node("sigmoid", out_data, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accumulate(out_data * (g - (g * out_data).sum(axis=-1, keepdims=True)))

    return _node("softmax", out_data, (a,), bw)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gm - y * gym))

    return _node("layer_norm", y.astype(a.data.dtype), (a,), bw)


# ---------------------------------------------------------------------------
# reductions and losses


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.data.dtype))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.data.dtype))

    return _node("sum", np.sum(a.data, axis=axis), (a,), bw)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]

    def bw(g):
        scaled = g / count
        if axis is None:
            a._accumulate(np.broadcast_to(scaled, a.shape).astype(a.data.dtype))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(scaled, axis), a.shape).astype(a.data.dtype))

    return _node("mean", np.mean(a.data, axis=axis), (a,), bw)


def sq_l2(a: Tensor) -> Tensor:
    """Squared euclidean norm over the last axis."""

    def bw(g):
        a._accumulate(2.0 * a.data * np.expand_dims(g, -1))

    return _node("sq_l2", np.sum(a.data * a.data, axis=-1), (a,), bw)


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-example cross-entropy; logits (B, C), integer labels (B,)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError(f"op 'cross_entropy': logits must be 2-d, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(
            f"op 'cross_entropy': labels shape {labels.shape} does not match logits {logits.shape}"
        )
    n_classes = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"op 'cross_entropy': label outside [0, {n_classes})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    rows = np.arange(x.shape[0])
    out_data = (lse - x[rows, labels]).astype(x.dtype)

    def bw(g):
        p = np.exp(x - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[rows, labels] -= 1.0
        logits._accumulate(p * g[:, None])

    return _node("cross_entropy", out_data, (logits,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements (scalar)."""
    d = sub(a, b)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# gradient routing


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward, contributes nothing backward."""
    out = Tensor(a.data.copy())
    out._op = "stop_gradient"
    return out


def st_identity(a: Tensor, values: np.ndarray) -> Tensor:
    """Forward takes `values`; backward is the identity into `a`.

    The straight-through building block: `values` must have a's shape and is
    treated as a constant, so only `a` sees the gradient.
    """
    values = np.asarray(values, dtype=a.data.dtype)
    if values.shape != a.data.shape:
        raise ValueError(f"op 'st_identity': values shape {values.shape} != input shape {a.shape}")

    def bw(g):
        a._accumulate(g)

    return _node("st_identity", values.copy(), (a,), bw)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Pick rows of a 2-d table by integer index; backward scatter-adds."""
    indices = np.asarray(indices)
    if table.data.ndim != 2:
        raise ValueError(f"op 'gather_rows': table must be 2-d, got {table.shape}")
    if indices.min() < 0 or indices.max() >= table.shape[0]:
        raise ValueError(f"op 'gather_rows': index outside [0, {table.shape[0]})")

    def bw(g):
        acc = np.zeros(table.shape, dtype=table.data.dtype)
        np.add.at(acc, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(acc)

    return _node("gather_rows", table.data[indices].copy(), (table,), bw)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a named parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
             eps_adam: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None) -> AdamState:
    """One Adam update in place; `grads` maps a subset of param names to arrays."""
    if state.t >= 2 ** 62:
        raise OverflowError("Adam step counter overflow")
    state.t += 1
    lr = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for '{name}'")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps_adam)
    return state


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# verification


def grad_check(fn, point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of `fn` and central
    finite differences at `point`, evaluated in float64.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    x64 = Tensor(point.data.astype(np.float64), requires_grad=True)
    out = fn(x64)
    if out.data.shape != ():
        raise ValueError(f"grad_check requires a scalar-valued fn, got shape {out.data.shape}")
    out.backward()
    analytic = np.zeros_like(x64.data) if x64.grad is None else x64.grad.copy()

    flat = point.data.astype(np.float64).reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        for sgn in (+1.0, -1.0):
            probe = flat.copy()
            probe[i] += sgn * h
            val = fn(Tensor(probe.reshape(point.shape), dtype=np.float64)).item()
            if not np.isfinite(val):
                raise FloatingPointError(f"fn non-finite at finite-difference probe {i}")
            if sgn > 0:
                fp = val
            else:
                fm = val
        numeric = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
