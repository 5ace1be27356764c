"""Finite-difference oracle for the reverse-mode engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs, h=1e-6, max_entries=None, rng=None):
    """Largest relative error between backprop and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor. Inputs are copied to
    float64 first. With ``max_entries`` only that many randomly chosen
    entries per input are perturbed. Entries whose true derivative is tiny
    relative to the largest one are compared against a floor of
    ``1e-6 * max|numeric|`` instead of their own magnitude.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    shadow = [Tensor(np.array(getattr(x, "data", x), dtype=np.float64), requires_grad=True)
              for x in inputs]
    out = fn(shadow)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in shadow]

    def value(arrays):
        ts = [Tensor(a, dtype=np.float64) for a in arrays]
        return float(fn(ts).data)

    base = [t.data.copy() for t in shadow]
    worst = 0.0
    for n, arr in enumerate(base):
        flat_idx = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_idx = rng.choice(arr.size, size=max_entries, replace=False)
        numeric = np.empty(len(flat_idx))
        for j, fi in enumerate(flat_idx):
            pert = [b.copy() for b in base]
            pert[n].flat[fi] += h
            up = value(pert)
            pert[n].flat[fi] -= 2 * h
            down = value(pert)
            numeric[j] = (up - down) / (2 * h)
        a = analytic[n].ravel()[flat_idx]
        floor = max(1e-6 * float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom, initial=0.0)))
    return worst
