"""Shared test utilities: finite-difference gradients and error metrics."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from asa.tensor import Tensor, grad


def numeric_grad(build: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of build() w.r.t. one parameter's entries."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        f_plus = float(build().data.reshape(-1)[0])
        flat[i] = saved - eps
        f_minus = float(build().data.reshape(-1)[0])
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return out


def rel_err(a: np.ndarray, n: np.ndarray) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_grads(
    build: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between autodiff and finite-difference gradients."""
    loss = build()
    grad(loss, params)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = numeric_grad(build, p, eps=eps)
        worst = max(worst, rel_err(analytic, numeric))
    return worst
