"""Finite-difference test cases for every differentiable op.

Each case is (loss_fn, make_inputs): the loss composes the op under test
into a scalar; inputs are fresh float64 tensors.  Shared between the
test suite and the gradcheck CLI subcommand.
"""
from __future__ import annotations

import numpy as np

from . import tensor as ad
from .tensor import Tensor


def _t64(rng, *shape, grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=grad, dtype=np.float64)


def op_gradcheck_cases(rng: np.random.Generator) -> dict:
    a23 = lambda: _t64(rng, 2, 3)
    return {
        "add": (lambda p: ad.mean(ad.mul(ad.add(p[0], p[1]), ad.add(p[0], p[1]))),
                lambda: [a23(), _t64(rng, 2, 3)]),
        "add_broadcast": (lambda p: ad.mean(ad.mul(ad.add(p[0], p[1]), ad.add(p[0], p[1]))),
                          lambda: [a23(), _t64(rng, 3)]),
        "sub": (lambda p: ad.mean(ad.mul(ad.sub(p[0], p[1]), ad.sub(p[0], p[1]))),
                lambda: [a23(), _t64(rng, 2, 3)]),
        "mul": (lambda p: ad.mean(ad.mul(p[0], p[1])),
                lambda: [a23(), _t64(rng, 2, 3)]),
        "mul_scalar": (lambda p: ad.mean(ad.mul(ad.mul(p[0], 1.7), p[0])),
                       lambda: [a23()]),
        "matmul": (lambda p: ad.mean(ad.matmul(p[0], p[1])),
                   lambda: [_t64(rng, 3, 4), _t64(rng, 4, 2)]),
        "matmul_batched": (lambda p: ad.mean(ad.mul(ad.matmul(p[0], p[1]),
                                                    ad.matmul(p[0], p[1]))),
                           lambda: [_t64(rng, 2, 3, 4), _t64(rng, 2, 4, 3)]),
        "relu": (lambda p: ad.mean(ad.relu(p[0])),
                 lambda: [Tensor(rng.normal(size=(3, 3))
                                 + np.sign(rng.normal(size=(3, 3))) * 0.2,
                                 requires_grad=True, dtype=np.float64)]),
        "tanh": (lambda p: ad.mean(ad.mul(ad.tanh(p[0]), p[0])), lambda: [a23()]),
        "sigmoid": (lambda p: ad.mean(ad.mul(ad.sigmoid(p[0]), p[0])),
                    lambda: [a23()]),
        "softmax": (lambda p: ad.mean(ad.mul(ad.softmax(p[0]), p[1])),
                    lambda: [a23(), _t64(rng, 2, 3)]),
        "layer_norm": (lambda p: ad.mean(ad.mul(ad.layer_norm(p[0], p[1], p[2]), p[3])),
                       lambda: [_t64(rng, 2, 4), _t64(rng, 4), _t64(rng, 4),
                                _t64(rng, 2, 4)]),
        "concat": (lambda p: ad.mean(ad.mul(ad.concat([p[0], p[1]], axis=1),
                                            ad.concat([p[0], p[1]], axis=1))),
                   lambda: [a23(), _t64(rng, 2, 2)]),
        "reshape": (lambda p: ad.mean(ad.mul(ad.reshape(p[0], (3, 2)),
                                             ad.reshape(p[0], (3, 2)))),
                    lambda: [a23()]),
        "transpose": (lambda p: ad.mean(ad.mul(ad.transpose(p[0], (1, 0)), p[1])),
                      lambda: [a23(), _t64(rng, 3, 2)]),
        "mean_axis": (lambda p: ad.mean(ad.mul(ad.mean(p[0], axis=(1,)),
                                               ad.mean(p[0], axis=(1,)))),
                      lambda: [a23()]),
        "mse_loss": (lambda p: ad.mse_loss(p[0], p[1]),
                     lambda: [a23(), _t64(rng, 2, 3, grad=False)]),
        "conv2d": (lambda p: ad.mean(ad.mul(ad.conv2d(p[0], p[1], p[2], stride=2, pad=1),
                                            ad.conv2d(p[0], p[1], p[2], stride=2, pad=1))),
                   lambda: [_t64(rng, 2, 3, 6, 6), _t64(rng, 4, 3, 3, 3),
                            _t64(rng, 4)]),
        "conv1d": (lambda p: ad.mean(ad.mul(ad.conv1d(p[0], p[1], p[2], pad=2),
                                            ad.conv1d(p[0], p[1], p[2], pad=2))),
                   lambda: [_t64(rng, 2, 3, 7), _t64(rng, 4, 3, 5), _t64(rng, 4)]),
        "select_step": (lambda p: ad.mean(ad.mul(ad.select_step(p[0], 1),
                                                 ad.select_step(p[0], 1))),
                        lambda: [_t64(rng, 2, 3, 4)]),
        "slice_last": (lambda p: ad.mean(ad.mul(ad.slice_last(p[0], 1, 3),
                                                ad.slice_last(p[0], 1, 3))),
                       lambda: [a23()]),
        "pad_last": (lambda p: ad.mean(ad.mul(ad.pad_last(p[0], 2),
                                              ad.pad_last(p[0], 2))),
                     lambda: [a23()]),
    }
