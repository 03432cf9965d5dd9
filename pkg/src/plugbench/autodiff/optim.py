"""Adam optimizer and gradient-norm clipping."""
from __future__ import annotations

import numpy as np



class Adam:
    """Standard Adam with bias correction; moment buffers start at zero."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
            p.data -= update.astype(p.data.dtype)
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError("non-finite parameter after Adam step")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        flat = g.ravel()
        total += float(np.vdot(flat, flat))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def adam_step(params, grads, lr, beta1, beta2, eps, t, m, v):
    """Single functional Adam update (t is the 1-based step index).

    Buffers m, v are updated in place; returns nothing.  The class above
    wraps this for training loops; this form exists for direct testing.
    """
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p -= (lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)).astype(p.dtype)
