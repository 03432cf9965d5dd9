"""Dense tensors with reverse-mode gradient recording.

Values are numpy arrays (float32 by default, float64 for gradient
checking).  Every differentiable op appends a node to a thread-local
tape; ``backward`` walks the tape once in reverse recording order.
"""
from __future__ import annotations

import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.grad_enabled = True
        _state.check_finite = False
    return _state


def set_check_finite(on: bool) -> None:
    """When on, every op output is validated to be finite (slow; test use)."""
    _tls().check_finite = on


class no_grad:
    """Context manager disabling tape recording (inference mode)."""

    def __enter__(self):
        st = _tls()
        self._prev = st.grad_enabled
        st.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _tls().grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _record(op_name, inputs, out_data, backward_fn) -> Tensor:
    st = _tls()
    if st.check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values produced by op '{op_name}'")
    req = st.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, dtype=out_data.dtype)
    if req:
        st.tape.append(_Node(inputs, out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # always copy: g may alias another input's gradient (e.g. add)
        if g.shape != t.data.shape:
            g = np.broadcast_to(g, t.data.shape)
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g back to `shape` undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Consumes the active tape.  d(loss)/d(loss) = 1.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    st = _tls()
    tape = st.tape
    st.tape = []
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        g = node.output.grad
        if g is None:
            continue
        node.backward_fn(g)
        # free intermediate grads; parameters hold theirs until zeroed
        if node.output is not loss:
            node.output.grad = None


def clear_tape() -> None:
    _tls().tape = []


def tape_size() -> int:
    return len(_tls().tape)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _record("add", (a, b), out, bwd)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _record("sub", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = a.data.dtype.type(b)
        out = a.data * c

        def bwd_scalar(g):
            _accumulate(a, g * c)

        return _record("mul", (a,), out, bwd_scalar)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _record("mul", (a, b), out, bwd)


def matmul(a, b) -> Tensor:
    """Matrix product with broadcast batch dims; both operands rank >= 2."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul requires rank >= 2 operands, got {a.data.shape} @ {b.data.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}") from e

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _record("matmul", (a, b), out, bwd)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def bwd(g):
        _accumulate(x, g * (x.data > 0))

    return _record("relu", (x,), out, bwd)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        _accumulate(x, g * (1.0 - out * out))

    return _record("tanh", (x,), out, bwd)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        _accumulate(x, g * out * (1.0 - out))

    return _record("sigmoid", (x,), out, bwd)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - dot))

    return _record("softmax", (x,), out, bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    bias = _as_tensor(bias, like=x)
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ValueError(
            f"layer_norm gain/bias shape {gain.data.shape}/{bias.data.shape} "
            f"does not match feature dim {x.data.shape[-1:]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        n = x.data.shape[-1]
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            t1 = gx.sum(axis=-1, keepdims=True)
            t2 = (gx * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - t1 / n - xhat * t2 / n))

    return _record("layer_norm", (x, gain, bias), out, bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        splits = np.cumsum(sizes[:-1])
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _record("concat", tuple(tensors), out, bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ValueError(f"reshape: cannot view {x.data.shape} as {shape}") from e

    def bwd(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _record("reshape", (x,), out, bwd)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def bwd(g):
        _accumulate(x, np.transpose(g, inverse))

    return _record("transpose", (x,), out, bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for i in ax:
            count *= x.data.shape[i]

    def bwd(g):
        if axis is not None and not keepdims:
            ax = (axis,) if isinstance(axis, int) else tuple(axis)
            g = np.expand_dims(g, ax)
        _accumulate(x, np.broadcast_to(g / count, x.data.shape))

    return _record("mean", (x,), out, bwd)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred = _as_tensor(pred)
    target = _as_tensor(target, like=pred)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out = np.mean(diff * diff)

    def bwd(g):
        scale = 2.0 / diff.size
        _accumulate(pred, (g * scale) * diff)
        if target.requires_grad:
            _accumulate(target, (-g * scale) * diff)

    return _record("mse_loss", (pred, target), np.asarray(out, dtype=pred.data.dtype), bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

_col2im_cache: dict = {}


def _im2col2d(x: np.ndarray, kh: int, kw: int, stride: int):
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, oh, ow, c, kh, kw), (s0, s2 * stride, s3 * stride, s1, s2, s3))
    return view.reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im2d_indices(n, c, h, w, kh, kw, stride, oh, ow):
    key = (n, c, h, w, kh, kw, stride)
    idx = _col2im_cache.get(key)
    if idx is None:
        oy, ox = np.meshgrid(np.arange(oh) * stride, np.arange(ow) * stride, indexing="ij")
        ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
        rows = oy[:, :, None, None, None] + ky[None, None, None, :, :]   # (oh,ow,1,kh,kw)
        cols = ox[:, :, None, None, None] + kx[None, None, None, :, :]
        ch = np.arange(c)[None, None, :, None, None]
        per_sample = (ch * h + rows) * w + cols                          # (oh,ow,c,kh,kw)
        base = np.arange(n)[:, None] * (c * h * w)
        idx = (base + per_sample.reshape(1, -1)).ravel()
        _col2im_cache[key] = idx
    return idx


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N,C,H,W), weight: (F,C,kh,kw), bias: (F,)."""
    x = _as_tensor(x)
    weight = _as_tensor(weight, like=x)
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.data.shape}, weight {weight.data.shape}")
    f, c, kh, kw = weight.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(x.data)
    n, _, h, w = xp.shape
    if h < kh or w < kw:
        raise ValueError(f"conv2d input {xp.shape} smaller than kernel {weight.data.shape}")
    col, oh, ow = _im2col2d(xp, kh, kw, stride)
    w2d = weight.data.reshape(f, -1)
    y = col @ w2d.T
    if bias is not None:
        bias = _as_tensor(bias, like=x)
        y += bias.data
    # transposed view; consumers that need contiguity copy on demand
    out = y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(-1, f)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2d.sum(axis=0))
        if weight.requires_grad:
            _accumulate(weight, (g2d.T @ col).reshape(weight.data.shape))
        if x.requires_grad:
            dcol = g2d @ w2d
            idx = _col2im2d_indices(n, c, h, w, kh, kw, stride, oh, ow)
            dxp = np.bincount(idx, weights=dcol.ravel().astype(np.float64),
                              minlength=n * c * h * w)
            dxp = dxp.reshape(n, c, h, w).astype(x.data.dtype)
            if pad:
                dxp = dxp[:, :, pad:h - pad, pad:w - pad]
            _accumulate(x, dxp)

    return _record("conv2d", inputs, out, bwd)


def conv1d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """1-D cross-correlation via conv2d. x: (N,C,L), weight: (F,C,k), bias: (F,)."""
    x = _as_tensor(x)
    weight = _as_tensor(weight, like=x)
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"conv1d shape mismatch: input {x.data.shape}, weight {weight.data.shape}")
    if pad:
        x = pad_last(x, pad)
    x4 = reshape(x, (x.data.shape[0], x.data.shape[1], 1, x.data.shape[2]))
    w4 = reshape(weight, (weight.data.shape[0], weight.data.shape[1], 1, weight.data.shape[2]))
    y4 = conv2d(x4, w4, bias=bias, stride=stride, pad=0)
    return reshape(y4, (y4.data.shape[0], y4.data.shape[1], y4.data.shape[3]))


def select_step(x, t: int) -> Tensor:
    """Select index t along axis 1: (N,T,D) -> (N,D)."""
    x = _as_tensor(x)
    out = np.ascontiguousarray(x.data[:, t, :])

    def bwd(g):
        gg = np.zeros_like(x.data)
        gg[:, t, :] = g
        _accumulate(x, gg)

    return _record("select_step", (x,), out, bwd)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Slice [start:stop] along the last axis."""
    x = _as_tensor(x)
    out = np.ascontiguousarray(x.data[..., start:stop])

    def bwd(g):
        gg = np.zeros_like(x.data)
        gg[..., start:stop] = g
        _accumulate(x, gg)

    return _record("slice_last", (x,), out, bwd)


def pad_last(x, pad: int) -> Tensor:
    """Zero-pad the last axis on both sides."""
    x = _as_tensor(x)
    if pad == 0:
        return x
    width = [(0, 0)] * (x.data.ndim - 1) + [(pad, pad)]
    out = np.pad(x.data, width)

    def bwd(g):
        sl = [slice(None)] * (x.data.ndim - 1) + [slice(pad, g.shape[-1] - pad)]
        _accumulate(x, g[tuple(sl)])

    return _record("pad_last", (x,), out, bwd)
