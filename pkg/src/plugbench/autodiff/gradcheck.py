"""Finite-difference gradient verification.

Central differences at 64-bit serve as the independent oracle for every
analytic backward rule.  ``check`` perturbs either all entries of each
input or a seeded subsample (for large parameter sets).
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, clear_tape, no_grad


def _eval(f) -> float:
    with no_grad():
        out = f()
    return float(out.data if isinstance(out, Tensor) else out)


def numeric_grad(f, arrays: list[np.ndarray], index: int, flat_i: int,
                 eps: float = 1e-4) -> float:
    """Central difference d f / d arrays[index].flat[flat_i]."""
    a = arrays[index]
    orig = a.flat[flat_i]
    a.flat[flat_i] = orig + eps
    fp = _eval(f)
    a.flat[flat_i] = orig - eps
    fm = _eval(f)
    a.flat[flat_i] = orig
    return (fp - fm) / (2.0 * eps)


def check(f, inputs: list[Tensor], eps: float = 1e-4, max_entries: int | None = None,
          rng: np.random.Generator | None = None, reject_nonsmooth: bool = True) -> float:
    """Compare analytic gradients of scalar f(inputs) against central differences.

    Returns the max relative error over all checked entries.  Entries where
    both gradients are below 1e-6 in magnitude count as zero error.

    Central differences are only a valid oracle where f is smooth across the
    perturbation window; for relu networks a window can straddle a kink.  A
    second difference at 2*eps detects such windows and the entry is skipped
    (another is sampled instead) when reject_nonsmooth is on.
    """
    for t in inputs:
        t.grad = None
    clear_tape()
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(t.data, dtype=np.float64) if t.grad is None
                else t.grad.astype(np.float64) for t in inputs]
    for t in inputs:
        t.grad = None
    arrays = [t.data for t in inputs]
    worst = 0.0
    for idx, arr in enumerate(arrays):
        n = arr.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            pool = rng.choice(n, size=min(n, 4 * max_entries), replace=False)
            quota = max_entries
        else:
            pool = range(n)
            quota = n
        checked = 0
        for flat_i in pool:
            if checked >= quota:
                break
            num = numeric_grad(f, arrays, idx, int(flat_i), eps)
            if reject_nonsmooth:
                num2 = numeric_grad(f, arrays, idx, int(flat_i), 2.0 * eps)
                scale = max(abs(num), abs(num2), 1e-3)
                if abs(num - num2) > 1e-5 * scale:
                    continue
            checked += 1
            ana = analytic[idx].flat[int(flat_i)]
            denom = max(abs(num), abs(ana))
            if denom < 1e-6:
                continue
            worst = max(worst, abs(num - ana) / denom)
    clear_tape()
    return worst
