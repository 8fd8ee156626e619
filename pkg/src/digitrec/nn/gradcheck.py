"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    worst: Optional[tuple] = None  # (input index, flat coordinate)
    n_checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol

    def __str__(self):
        return f"{self.op}: max rel err {self.max_rel_error:.3e} over {self.n_checked} coords (worst {self.worst})"


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def grad_check(fn, inputs, h=1e-5, rng=None, max_coords=None, name=None) -> GradCheckReport:
    """Compare backprop against central differences.

    ``fn(*inputs)`` returns a Tensor; the scalar checked is its inner product
    with a fixed random projection. Every input with ``requires_grad`` is
    perturbed coordinate-wise (at most ``max_coords`` sampled coordinates per
    input when given). Inputs must be float64.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in inputs:
        if t.requires_grad and t.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()

    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)
    out.backward(proj)

    def objective():
        return float(np.sum(fn(*inputs).data * proj))

    worst_err, worst, count = 0.0, None, 0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = objective()
            flat[c] = orig - h
            f_minus = objective()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            err = float(rel_error(analytic.reshape(-1)[c], numeric))
            count += 1
            if worst is None or err > worst_err:
                worst_err, worst = err, (i, int(c))
        t.zero_grad()
    return GradCheckReport(name or getattr(fn, "__name__", "op"), worst_err, worst, count)
