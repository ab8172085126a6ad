"""Minimal reverse-mode autodiff kernel.

Only the operations the reference detector needs are implemented: 1-D
convolution, per-channel batch-statistics normalization, relu / sigmoid /
softmax-over-time, elementwise arithmetic, reductions, gather, and the
stable softplus used by the ranking loss. Forward values live in whatever
float dtype the inputs carry (float32 for training, float64 for gradient
checks).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, GradientStateError, ValidationError


class Tensor:
    """An ndarray plus an optional gradient and the recorded op that made it."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self._backward_done = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.values.dtype, copy=True)
    else:
        t.grad += g


def _result(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor):
    """Reverse-mode accumulation from a scalar; grads of reused nodes sum."""
    if loss.values.size != 1:
        raise DimensionError(f"backward needs a scalar, got shape {loss.shape}")
    if loss._backward_done:
        raise GradientStateError(
            "backward already ran for this tensor; rebuild the graph before "
            "differentiating again"
        )
    loss._backward_done = True
    if not loss.requires_grad:
        return

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_values = a.values + b.values

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out_values, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_values = a.values - b.values

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(out_values, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_values = a.values * b.values

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _result(out_values, (a, b), _bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _result(-a.values, (a,), _bw)


def power(a, exponent: float) -> Tensor:
    """a ** exponent for a constant real exponent (a >= 0 expected)."""
    a = as_tensor(a)
    out_values = a.values**exponent

    def _bw(g):
        if a.requires_grad:
            if exponent == 0:
                _accumulate(a, np.zeros_like(a.values))
            else:
                _accumulate(a, g * exponent * a.values ** (exponent - 1))

    return _result(out_values, (a,), _bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g / a.values)

    return _result(np.log(a.values), (a,), _bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only inside the open interval."""
    a = as_tensor(a)
    out_values = np.clip(a.values, lo, hi)
    inside = (a.values > lo) & (a.values < hi)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * inside)

    return _result(out_values, (a,), _bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _result(a.values.reshape(shape), (a,), _bw)


def take(a, indices) -> Tensor:
    """Gather along the first axis; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices)

    def _bw(g):
        if a.requires_grad:
            acc = np.zeros_like(a.values)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)

    return _result(a.values[idx], (a,), _bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _result(a.values.sum(), (a,), _bw)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.values.size

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True))

    return _result(a.values.mean(), (a,), _bw)


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _result(a.values.sum(axis=axis), (a,), _bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _result(np.maximum(a.values, 0), (a,), _bw)


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    e = np.exp(np.where(v >= 0, -v, v))  # exp of a non-positive number
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_values(a.values)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * s * (1 - s))

    return _result(s, (a,), _bw)


def softplus(a) -> Tensor:
    """log(1 + exp(a)), overflow-safe."""
    a = as_tensor(a)
    v = a.values
    out_values = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * _sigmoid_values(v))

    return _result(out_values, (a,), _bw)


def softmax_time(a) -> Tensor:
    """Softmax along the last (time) axis with max-subtraction stability."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.values)):
        raise ValidationError("softmax input must be finite")
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(a, (g - inner) * s)

    return _result(s, (a,), _bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    x: (B, Cin, T), w: (Cout, Cin, K), b: (Cout,) or None.
    Output length T' = floor((T + 2*padding - K) / stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    if x.values.ndim != 3 or w.values.ndim != 3:
        raise DimensionError(
            f"conv1d expects 3-D input and kernel, got {x.shape} and {w.shape}"
        )
    batch, c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"input has {c_in} channels, kernel expects {c_in_w}")
    if k > t + 2 * padding:
        raise DimensionError(f"kernel size {k} exceeds padded length {t + 2 * padding}")
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"bias shape {b.shape} != ({c_out},)")

    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding))) if padding else x.values
    t_out = (t + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch, t_out, c_in * k)
    w2 = w.values.reshape(c_out, c_in * k)
    out_values = np.matmul(cols, w2.T).transpose(0, 2, 1)  # (B, Cout, T')
    if b is not None:
        out_values = out_values + b.values[None, :, None]

    parents = (x, w) if b is None else (x, w, b)

    def _bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1))  # (B, T', Cout)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 1], [0, 1]))  # (Cout, Cin*K)
            _accumulate(w, gw.reshape(c_out, c_in, k))
        if x.requires_grad:
            gcols = np.matmul(g2, w2).reshape(batch, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            for kk in range(k):
                gxp[:, :, kk : kk + stride * (t_out - 1) + 1 : stride] += gcols[:, :, :, kk]
            _accumulate(x, gxp[:, :, padding : padding + t] if padding else gxp)

    return _result(out_values, parents, _bw)


# ---------------------------------------------------------------------------
# batch-statistics normalization
# ---------------------------------------------------------------------------


class NormState:
    """Running per-channel statistics for a normalization layer."""

    __slots__ = ("running_mean", "running_var")

    def __init__(self, n_channels: int, dtype=np.float32):
        self.running_mean = np.zeros(n_channels, dtype=dtype)
        self.running_var = np.ones(n_channels, dtype=dtype)


def batch_norm(
    x,
    scale,
    shift,
    state: NormState,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, time) for (B, C, T) input.

    Train mode normalizes by the batch statistics (biased variance) and
    folds them into the running stats; eval mode uses the running stats.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.values.ndim != 3:
        raise DimensionError(f"batch_norm expects (B, C, T), got {x.shape}")
    batch, channels, t = x.shape
    if scale.shape != (channels,) or shift.shape != (channels,):
        raise DimensionError("scale/shift must be per-channel vectors")

    if training:
        if batch * t <= 1:
            raise DimensionError("train-mode normalization needs more than one value per channel")
        mean = x.values.mean(axis=(0, 2))
        var = x.values.var(axis=(0, 2))
        state.running_mean[...] = (1 - momentum) * state.running_mean + momentum * mean
        state.running_var[...] = (1 - momentum) * state.running_var + momentum * var
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    centered = x.values - mean[None, :, None]
    xhat = centered * inv[None, :, None]
    out_values = scale.values[None, :, None] * xhat + shift.values[None, :, None]

    def _bw(g):
        if scale.requires_grad:
            _accumulate(scale, (g * xhat).sum(axis=(0, 2)))
        if shift.requires_grad:
            _accumulate(shift, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxhat = g * scale.values[None, :, None]
            if training:
                n = batch * t
                gvar = (gxhat * centered).sum(axis=(0, 2)) * (-0.5) * inv**3
                gmean = (
                    -(gxhat.sum(axis=(0, 2))) * inv
                    + gvar * (-2.0 / n) * centered.sum(axis=(0, 2))
                )
                gx = (
                    gxhat * inv[None, :, None]
                    + (gvar * (2.0 / n))[None, :, None] * centered
                    + (gmean / n)[None, :, None]
                )
            else:
                gx = gxhat * inv[None, :, None]
            _accumulate(x, gx)

    return _result(out_values, (x, scale, shift), _bw)
