"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Nodes evaluate eagerly at construction (forward pass), so a graph is built
and computed in one sweep; `backward` walks the recorded graph in reverse
topological order and accumulates gradients into `.grad`. Repeated backward
calls without `zero_grad` accumulate additively.

The primitive set is exactly what the encoders, projection heads, losses
and probes need: matmul, temporal convolution over (time, joints) grids,
adjacency mixing, channel maps, relu/sigmoid/softplus, exp/log, reductions,
log-sum-exp, softmax, L2 normalization, concatenation and reshaping.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeError",
    "ContractError",
    "NumericError",
    "backward",
    "zero_grad",
    "check_gradients",
]


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    """One node of the computation graph; values are always float64."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, op=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # own a dense copy
            if self.grad.shape != self.values.shape:
                self.grad = np.broadcast_to(self.grad, self.values.shape).copy()
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # small operator sugar; heavy lifting lives in the module functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_values = a.values + b.values
    except ValueError as e:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from e

    def bw(out, g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_fn=bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_values = a.values * b.values
    except ValueError as e:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e

    def bw(out, g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.values.shape))

    return Tensor(out_values, parents=(a, b), backward_fn=bw)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bw(out, g):
        if a.requires_grad:
            a.accumulate(g * c)

    return Tensor(a.values * c, parents=(a,), backward_fn=bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects (..., m, k) @ (k, n), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def bw(out, g):
        if a.requires_grad:
            a.accumulate(g @ b.values.T)
        if b.requires_grad:
            k, n = b.values.shape
            b.accumulate(a.values.reshape(-1, k).T @ g.reshape(-1, n))

    return Tensor(out_values, parents=(a, b), backward_fn=bw)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(x) -> Tensor:
    x = _as_tensor(x)
    out_values = np.maximum(x.values, 0.0)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g * (x.values > 0.0))  # derivative at 0 defined as 0

    return Tensor(out_values, parents=(x,), backward_fn=bw, op="relu")


def relu_kink_margin(root: Tensor) -> float:
    """Smallest |preactivation| feeding any relu reachable from root.

    Finite-difference checks are only meaningful at points where no relu
    input sits within the perturbation radius of 0; callers redraw a point
    whose margin is too small.
    """
    margin = np.inf
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "relu":
            margin = min(margin, float(np.abs(node._parents[0].values).min()))
        stack.extend(node._parents)
    return margin


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out_values = np.exp(x.values)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g * out.values)

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def log(x) -> Tensor:
    x = _as_tensor(x)
    out_values = np.log(x.values)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g / x.values)

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    v = x.values
    out_values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g * out.values * (1.0 - out.values))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated stably."""
    x = _as_tensor(x)
    v = x.values
    out_values = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))

    def bw(out, g):
        if x.requires_grad:
            s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
            x.accumulate(g * s)

    return Tensor(out_values, parents=(x,), backward_fn=bw)


# ---------------------------------------------------------------------------
# reductions and soft operations

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_values = x.values.sum(axis=axis, keepdims=keepdims)

    def bw(out, g):
        if not x.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.values.shape))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.values.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= x.values.shape[ax]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    m = x.values.max(axis=axis, keepdims=True)
    shifted = np.exp(x.values - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_values = np.squeeze(m + np.log(total), axis=axis)

    def bw(out, g):
        if x.requires_grad:
            soft = shifted / total
            x.accumulate(np.expand_dims(g, axis) * soft)

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def softmax(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    m = x.values.max(axis=axis, keepdims=True)
    e = np.exp(x.values - m)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def bw(out, g):
        if x.requires_grad:
            s = out.values
            inner = (g * s).sum(axis=axis, keepdims=True)
            x.accumulate(s * (g - inner))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(|x|_2, eps) along `axis`."""
    x = _as_tensor(x)
    norm = np.sqrt((x.values**2).sum(axis=axis, keepdims=True))
    n = np.maximum(norm, eps)
    out_values = x.values / n

    def bw(out, g):
        if not x.requires_grad:
            return
        live = (norm > eps).astype(np.float64)
        inner = (g * x.values).sum(axis=axis, keepdims=True)
        x.accumulate(g / n - x.values * inner * live / (np.maximum(norm, eps) * n * n))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


# ---------------------------------------------------------------------------
# structure

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out_values = x.values.reshape(shape)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.values.shape))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_values = x.values.transpose(axes)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate(g.transpose(inv))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def concat(xs, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out_values = np.concatenate([x.values for x in xs], axis=axis)
    sizes = [x.values.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(out, g):
        parts = np.split(g, splits, axis=axis)
        for x, gp in zip(xs, parts):
            if x.requires_grad:
                x.accumulate(gp)

    return Tensor(out_values, parents=tuple(xs), backward_fn=bw)


# ---------------------------------------------------------------------------
# grid convolutions for (batch, channels, time, joints) tensors

def joint_mix(x, adjacency: np.ndarray) -> Tensor:
    """Mix joint axis with a constant (J, J) matrix: out[..., j] = sum_k x[..., k] A[k, j]."""
    x = _as_tensor(x)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if x.ndim != 4 or adjacency.shape != (x.shape[-1], x.shape[-1]):
        raise ShapeError(f"joint_mix: got x {x.shape}, adjacency {adjacency.shape}")
    shape = x.values.shape
    j = shape[-1]
    out_values = (x.values.reshape(-1, j) @ adjacency).reshape(shape)

    def bw(out, g):
        if x.requires_grad:
            x.accumulate((g.reshape(-1, j) @ adjacency.T).reshape(shape))

    return Tensor(out_values, parents=(x,), backward_fn=bw)


def channel_map(x, w) -> Tensor:
    """Pointwise channel transform: x (B, Cin, T, J), w (Cout, Cin) -> (B, Cout, T, J)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_map: got x {x.shape}, w {w.shape}")
    b, c_in, t, j = x.values.shape
    c_out = w.shape[0]
    xt = np.ascontiguousarray(x.values.transpose(0, 2, 3, 1)).reshape(-1, c_in)  # (BTJ, Cin)
    out_values = np.ascontiguousarray(
        (xt @ w.values.T).reshape(b, t, j, c_out).transpose(0, 3, 1, 2))

    def bw(out, g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        if x.requires_grad:
            x.accumulate(np.ascontiguousarray(
                (gt @ w.values).reshape(b, t, j, c_in).transpose(0, 3, 1, 2)))
        if w.requires_grad:
            w.accumulate(gt.T @ xt)

    return Tensor(out_values, parents=(x, w), backward_fn=bw)


def temporal_conv(x, w, stride: int = 1) -> Tensor:
    """1-D convolution along the time axis of a (B, C, T, J) tensor.

    w has shape (Cout, Cin, k) with odd k; time is zero-padded by (k-1)/2 so
    the output length is ceil(T / stride).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 3:
        raise ShapeError(f"temporal_conv: got x {x.shape}, w {w.shape}")
    cout, cin, k = w.shape
    if cin != x.shape[1]:
        raise ShapeError(f"temporal_conv: channel mismatch, x {x.shape} vs w {w.shape}")
    if k % 2 != 1:
        raise ShapeError(f"temporal_conv: kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    b, _, t, j = x.values.shape
    xp = np.pad(x.values, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]  # (B, Cin, To, J, k)
    t_out = win.shape[2]
    # im2col: (B*To*J, Cin*k) @ (Cin*k, Cout)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4)).reshape(-1, cin * k)
    w2 = w.values.reshape(cout, cin * k)
    out_values = np.ascontiguousarray(
        (cols @ w2.T).reshape(b, t_out, j, cout).transpose(0, 3, 1, 2))

    def bw(out, g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        if w.requires_grad:
            w.accumulate((gt.T @ cols).reshape(cout, cin, k))
        if x.requires_grad:
            gwin = (gt @ w2).reshape(b, t_out, j, cin, k).transpose(0, 3, 1, 2, 4)
            gxp = np.zeros_like(xp)
            for kk in range(k):
                gxp[:, :, kk : kk + (t_out - 1) * stride + 1 : stride, :] += gwin[:, :, :, :, kk]
            x.accumulate(gxp[:, :, pad : pad + t, :])

    return Tensor(out_values, parents=(x, w), backward_fn=bw)


def time_slice(x, stride: int) -> Tensor:
    """Subsample the time axis of a (B, C, T, J) tensor (residual path striding)."""
    x = _as_tensor(x)
    out_values = x.values[:, :, ::stride, :].copy()

    def bw(out, g):
        if x.requires_grad:
            gx = np.zeros_like(x.values)
            gx[:, :, ::stride, :] = g
            x.accumulate(gx)

    return Tensor(out_values, parents=(x,), backward_fn=bw)


# ---------------------------------------------------------------------------
# graph traversal

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf; root must be scalar."""
    if root.values.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.values.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    root.accumulate(np.array(1.0))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node, node.grad)


def zero_grad(tensors) -> None:
    if isinstance(tensors, dict):
        tensors = tensors.values()
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# verification harness

def check_gradients(fn, point, epsilon: float = 1e-4) -> float:
    """Max relative error between backprop and central finite differences.

    `point` is one ndarray or a dict of named ndarrays; `fn` receives the
    same structure built of Tensors and must return a scalar Tensor.
    The relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    single = not isinstance(point, dict)
    arrays = {"x": np.asarray(point, dtype=np.float64)} if single else {
        k: np.asarray(v, dtype=np.float64) for k, v in point.items()
    }

    def call(values: dict) -> float:
        leaves = {k: Tensor(v) for k, v in values.items()}
        out = fn(leaves["x"]) if single else fn(leaves)
        if out.values.shape != ():
            raise ContractError("check_gradients needs a scalar-valued function")
        return float(out.values)

    leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    root = fn(leaves["x"]) if single else fn(leaves)
    if root.values.shape != ():
        raise ContractError("check_gradients needs a scalar-valued function")
    if not np.isfinite(root.values):
        raise NumericError("non-finite function value at the check point")
    backward(root)

    worst = 0.0
    for name, base in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"non-finite gradient for '{name}'")
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = call(arrays)
            flat[i] = orig - epsilon
            f_minus = call(arrays)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("non-finite value during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
