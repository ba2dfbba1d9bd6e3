"""Optimizers, learning-rate schedules, and weight init.

The pretraining optimizer is Adam with decoupled weight decay; the fine-tuning
optimizer is SGD with heavy momentum and a polynomial decay schedule.  Both
mutate parameter .data buffers in place and keep their state in plain dicts of
ndarrays so checkpoints can serialize them without ceremony.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor, parameter


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam-with-decay hyperparameters plus the warmup/cosine schedule.

    `warmup_start_lr` is the lr at step 0; it ramps linearly to `base_lr`
    over `warmup_steps`, then follows a half-cosine down to zero at
    `total_steps`.
    """

    base_lr: float = 1.5e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    eps: float = 1e-8
    warmup_steps: int = 0
    total_steps: int = 1
    warmup_start_lr: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractViolation(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.base_lr <= 0.0 or self.warmup_start_lr < 0.0:
            raise ContractViolation("learning rates must be positive")
        if self.weight_decay < 0.0:
            raise ContractViolation("weight decay must be >= 0")
        if self.total_steps < 1:
            raise ContractViolation("total_steps must be >= 1")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ContractViolation("warmup_steps must lie in [0, total_steps]")


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Learning rate at an integer step; clamps past total_steps."""
    if step < 0:
        raise ContractViolation(f"step must be >= 0, got {step}")
    step = min(step, cfg.total_steps)
    if step < cfg.warmup_steps:
        frac = step / cfg.warmup_steps
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * frac
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.base_lr
    progress = (step - cfg.warmup_steps) / span
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def optimizer_step(
    params: dict[str, Tensor],
    state: dict[str, dict[str, np.ndarray]],
    cfg: OptimizerConfig,
    step: int,
    lr: float | None = None,
) -> None:
    """One Adam update with decoupled weight decay, in place.

    `step` counts from 0 for the first update; bias correction uses step+1.
    The schedule lr is used unless an explicit `lr` is given.  Weight decay
    multiplies parameters by (1 - lr * wd) before the Adam delta, so a
    zero-gradient parameter still shrinks.
    """
    if lr is None:
        lr = lr_at(step, cfg)
    t = step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.items():
        if p.grad is None:
            raise ContractViolation(f"parameter {name!r} has no gradient")
        g = p.grad
        st = state.get(name)
        if st is None:
            st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            state[name] = st
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * (g * g)
        m_hat = st["m"] / (1.0 - b1**t)
        v_hat = st["v"] / (1.0 - b2**t)
        if cfg.weight_decay:
            p.data *= 1.0 - lr * cfg.weight_decay
        p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass(frozen=True)
class SgdConfig:
    """Momentum SGD with polynomial lr decay (lr0 * (1 - t/T)^power)."""

    base_lr: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 3e-5
    poly_power: float = 0.9
    total_steps: int = 1

    def __post_init__(self):
        if not (0.0 <= self.momentum < 1.0):
            raise ContractViolation(f"momentum must lie in [0, 1): {self.momentum}")
        if self.base_lr <= 0.0 or self.weight_decay < 0.0 or self.poly_power <= 0.0:
            raise ContractViolation("bad SGD hyperparameters")
        if self.total_steps < 1:
            raise ContractViolation("total_steps must be >= 1")


def poly_lr_at(step: int, cfg: SgdConfig) -> float:
    if step < 0:
        raise ContractViolation(f"step must be >= 0, got {step}")
    frac = min(step, cfg.total_steps) / cfg.total_steps
    return cfg.base_lr * (1.0 - frac) ** cfg.poly_power


def sgd_step(
    params: dict[str, Tensor],
    state: dict[str, dict[str, np.ndarray]],
    cfg: SgdConfig,
    step: int,
    lr: float | None = None,
) -> None:
    """One momentum-SGD update in place; weight decay is added to the gradient."""
    if lr is None:
        lr = poly_lr_at(step, cfg)
    for name, p in params.items():
        if p.grad is None:
            raise ContractViolation(f"parameter {name!r} has no gradient")
        g = p.grad + cfg.weight_decay * p.data
        st = state.get(name)
        if st is None:
            st = {"vel": np.zeros_like(p.data)}
            state[name] = st
        st["vel"] = cfg.momentum * st["vel"] + g
        p.data -= lr * st["vel"]


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    For rank > 2 the trailing dims count as the receptive field, so fans are
    shape[1]*prod(rest) and shape[0]*prod(rest).
    """
    if len(shape) < 2:
        raise ContractViolation(f"xavier init needs rank >= 2, got shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[1] * receptive
    fan_out = shape[0] * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform_init(shape: tuple[int, ...], seed: int) -> Tensor:
    """A fresh trainable Tensor, deterministically initialized from `seed`."""
    return parameter(xavier_uniform(tuple(shape), np.random.default_rng(seed)))
