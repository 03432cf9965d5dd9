"""Trainable layers composed from the tensor ops.

All weight initialization draws from an explicit numpy Generator so
model construction is a pure function of the seed.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container: parameters are Tensor attributes (or nested Modules)."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True, dtype=dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        bound = math.sqrt(6.0 / (d_in + d_out))
        self.weight = _param(rng.uniform(-bound, bound, (d_in, d_out)), dtype)
        self.bias = _param(np.zeros(d_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator, pad: int = 0, dtype=np.float32):
        fan_in = c_in * kernel * kernel
        std = math.sqrt(2.0 / fan_in)
        self.weight = _param(rng.normal(0.0, std, (c_out, c_in, kernel, kernel)), dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 pad: int = 0, dtype=np.float32):
        fan_in = c_in * kernel
        std = math.sqrt(2.0 / fan_in)
        self.weight = _param(rng.normal(0.0, std, (c_out, c_in, kernel)), dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=1, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gain = _param(np.ones(dim), dtype)
        self.bias = _param(np.zeros(dim), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class LSTM(Module):
    """Stacked LSTM; forward returns the last layer's final hidden state."""

    def __init__(self, d_in: int, hidden: int, layers: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.hidden = hidden
        self.w_ih = []
        self.w_hh = []
        self.b = []
        bound = 1.0 / math.sqrt(hidden)
        for layer in range(layers):
            d = d_in if layer == 0 else hidden
            self.w_ih.append(_param(rng.uniform(-bound, bound, (d, 4 * hidden)), dtype))
            self.w_hh.append(_param(rng.uniform(-bound, bound, (hidden, 4 * hidden)), dtype))
            self.b.append(_param(np.zeros(4 * hidden), dtype))

    def forward(self, x: Tensor) -> Tensor:
        n, steps, _ = x.shape
        h_prev = x
        dtype = x.dtype
        for w_ih, w_hh, b in zip(self.w_ih, self.w_hh, self.b):
            hh = Tensor(np.zeros((n, self.hidden)), dtype=dtype)
            cc = Tensor(np.zeros((n, self.hidden)), dtype=dtype)
            outs = []
            for t in range(steps):
                xt = T.select_step(h_prev, t)
                gates = T.add(T.add(T.matmul(xt, w_ih), T.matmul(hh, w_hh)), b)
                i = T.sigmoid(T.slice_last(gates, 0, self.hidden))
                f = T.sigmoid(T.slice_last(gates, self.hidden, 2 * self.hidden))
                g = T.tanh(T.slice_last(gates, 2 * self.hidden, 3 * self.hidden))
                o = T.sigmoid(T.slice_last(gates, 3 * self.hidden, 4 * self.hidden))
                cc = T.add(T.mul(f, cc), T.mul(i, g))
                hh = T.mul(o, T.tanh(cc))
                outs.append(T.reshape(hh, (n, 1, self.hidden)))
            h_prev = T.concat(outs, axis=1)
        return hh


class MultiheadAttention(Module):
    def __init__(self, d_model: int, n_head: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % n_head:
            raise ValueError(f"d_model {d_model} not divisible by n_head {n_head}")
        self.n_head = n_head
        self.d_head = d_model // n_head
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_model, d_model, rng, dtype)
        self.v = Linear(d_model, d_model, rng, dtype)
        self.out = Linear(d_model, d_model, rng, dtype)

    def _split(self, x: Tensor, n: int, s: int) -> Tensor:
        x = T.reshape(x, (n, s, self.n_head, self.d_head))
        return T.transpose(x, (0, 2, 1, 3))

    def forward(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        n, sq, d = query.shape
        sk = key.shape[1]
        q = self._split(self.q(query), n, sq)
        k = self._split(self.k(key), n, sk)
        v = self._split(self.v(value), n, sk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.d_head))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, sq, d))
        return self.out(ctx)


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: self-attention then position-wise FFN."""

    def __init__(self, d_model: int, n_head: int, d_ff: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.attn = MultiheadAttention(d_model, n_head, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(d_model, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d_model, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(T.add(x, self.attn(x, x, x)))
        return self.norm2(T.add(x, self.ff2(T.relu(self.ff1(x)))))


class TransformerDecoderLayer(Module):
    """Post-norm decoder layer: self-attention, cross-attention, FFN."""

    def __init__(self, d_model: int, n_head: int, d_ff: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.self_attn = MultiheadAttention(d_model, n_head, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.cross_attn = MultiheadAttention(d_model, n_head, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(d_model, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d_model, rng, dtype)
        self.norm3 = LayerNorm(d_model, dtype)

    def forward(self, tgt: Tensor, memory: Tensor) -> Tensor:
        tgt = self.norm1(T.add(tgt, self.self_attn(tgt, tgt, tgt)))
        tgt = self.norm2(T.add(tgt, self.cross_attn(tgt, memory, memory)))
        return self.norm3(T.add(tgt, self.ff2(T.relu(self.ff1(tgt)))))


def global_avg_pool_2d(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C)."""
    return T.mean(x, axis=(2, 3))


def global_avg_pool_1d(x: Tensor) -> Tensor:
    """(N,C,L) -> (N,C)."""
    return T.mean(x, axis=(2,))
