"""Finite-difference verification of every differentiable operation.

Each check builds a small graph, computes analytic gradients for all of its
parameters, then re-derives them by central differences and reports the worst
relative error.  The model checks run the real encoder/decoder and the
segmentation head end to end, so a regression in any primitive's backward
rule shows up here by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import (
    AttentionConfig,
    AttentionWeights,
    BlockWeights,
    lw_msa,
    slw_msa,
    transformer_block,
)
from .config import RunConfig
from .model import AsaModel, ar_loss
from .patching import make_mask_plan, patchify
from .phantom import PhantomSpec, gen_phantom
from .segmentation import SegModel, dice_ce_loss, trilinear_upsample
from .tensor import (
    Tensor,
    concat,
    conv3d,
    exp,
    gather,
    gelu,
    grad,
    layer_norm,
    linear,
    log,
    parameter,
    roll,
    slice_rows,
    softmax,
    square,
    tmean,
    tsum,
)
from .vhog import informativeness_weights


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_err: float
    tol: float
    ok: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    params: list[Tensor],
    eps: float = 1e-6,
) -> float:
    """Worst relative error between analytic and central-difference grads."""
    grad(fn(), params)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn().data.reshape(()))
            flat[i] = orig - eps
            lo = float(fn().data.reshape(()))
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        worst = max(worst, relative_error(a.reshape(-1), numeric))
    return worst


def _primitive_checks(rng: np.random.Generator):
    a = parameter(rng.normal(size=(3, 4)))
    b = parameter(rng.normal(size=(3, 4)))
    row = parameter(rng.normal(size=(4,)))
    pos = parameter(rng.random((3, 4)) + 0.5)
    m1 = parameter(rng.normal(size=(2, 3, 4)))
    m2 = parameter(rng.normal(size=(4, 5)))
    lw = parameter(rng.normal(size=(4, 6)) * 0.5)
    lb = parameter(np.zeros(6))
    g = parameter(rng.normal(size=(4,)) + 1.0)
    beta = parameter(rng.normal(size=(4,)) * 0.1)
    cw = parameter(rng.normal(size=(2, 3, 3, 3, 3)) * 0.2)
    cb = parameter(rng.normal(size=(2,)) * 0.1)
    cx = parameter(rng.normal(size=(3, 5, 5, 5)) * 0.5)
    idx = np.array([0, 2, 0, 1], dtype=np.intp)

    def scalar(t: Tensor) -> Tensor:
        return tsum(square(t))

    return [
        ("add_broadcast", 1e-4, [a, row], lambda: scalar(a + row)),
        ("sub", 1e-4, [a, b], lambda: scalar(a - b)),
        ("mul", 1e-4, [a, b], lambda: scalar(a * b)),
        ("div", 1e-4, [a, pos], lambda: scalar(a / pos)),
        ("neg", 1e-4, [a], lambda: scalar(-a)),
        ("square", 1e-4, [a], lambda: tsum(square(square(a)))),
        ("exp", 1e-4, [a], lambda: scalar(exp(a))),
        ("log", 1e-4, [pos], lambda: scalar(log(pos))),
        ("gelu", 1e-4, [a], lambda: scalar(gelu(a))),
        ("reshape", 1e-4, [a], lambda: scalar(a.reshape(4, 3))),
        ("transpose", 1e-4, [m1], lambda: scalar(m1.transpose(2, 0, 1))),
        ("gather_dup", 1e-4, [a], lambda: scalar(gather(a, idx))),
        ("concat", 1e-4, [a, b], lambda: scalar(concat([a, b], axis=1))),
        ("roll", 1e-4, [a], lambda: scalar(roll(a, -2))),
        ("slice_rows", 1e-4, [a], lambda: scalar(slice_rows(a, 0, 2))),
        ("sum_axis", 1e-4, [m1], lambda: scalar(tsum(m1, axis=1))),
        ("mean_axis", 1e-4, [m1], lambda: scalar(tmean(m1, axis=2))),
        ("matmul_batched", 1e-4, [m1, m2], lambda: scalar(m1 @ m2)),
        ("linear", 1e-4, [a, lw, lb], lambda: scalar(linear(a, lw, lb))),
        ("softmax", 1e-4, [a], lambda: scalar(softmax(a))),
        ("layer_norm", 1e-4, [a, g, beta], lambda: scalar(layer_norm(a, g, beta))),
        ("conv3d", 1e-4, [cx, cw, cb], lambda: scalar(conv3d(cx, cw, cb))),
        ("upsample_trilinear", 1e-4, [cx], lambda: scalar(trilinear_upsample(cx, 2))),
    ]


def _attention_checks(rng: np.random.Generator):
    cfg = AttentionConfig(dim=6, n_heads=2, window=4, depth=2, mlp_ratio=2)
    x = parameter(rng.normal(size=(6, 6)) * 0.5)
    attn = AttentionWeights.build(cfg.dim, rng)
    blk = BlockWeights.build(cfg, rng)
    attn_params = [x] + [t for _, t in attn.named("a")]
    blk_params = [x] + [t for _, t in blk.named("b")]

    def scalar(t: Tensor) -> Tensor:
        return tsum(square(t))

    return [
        ("lw_msa_padded", 1e-4, attn_params, lambda: scalar(lw_msa(x, cfg, attn))),
        ("slw_msa_padded", 1e-4, attn_params, lambda: scalar(slw_msa(x, cfg, attn))),
        (
            "transformer_block",
            1e-4,
            blk_params,
            lambda: scalar(transformer_block(x, cfg, blk, shifted=True)),
        ),
    ]


def _tiny_config() -> RunConfig:
    return RunConfig(
        seed=11,
        dims=(8, 8, 8),
        patch_size=4,
        dim=8,
        n_heads=2,
        window=4,
        enc_depth=2,
        dec_dim=8,
        dec_heads=2,
        dec_depth=2,
        mlp_ratio=2,
        bins=4,
        n_classes=3,
        seg_c1=4,
        seg_c2=3,
        total_steps=8,
        n_volumes=2,
        n_eval_volumes=1,
    )


def _model_checks():
    cfg = _tiny_config()
    spec = PhantomSpec(
        dims=cfg.dims, n_structures=1, n_lesions=1, noise_sigma=0.01, seed=5
    )
    vol = gen_phantom(spec)
    grid = cfg.patch_grid()
    plan = make_mask_plan(grid.n_patches, cfg.mask_ratio, seed=3)
    patches = patchify(vol.voxels, cfg.patch_size).astype(np.float64)
    weights = informativeness_weights(vol.voxels, grid, plan, cfg.bins)

    model = AsaModel(cfg)
    model_params = list(model.parameters().values())

    def asa_loss() -> Tensor:
        return ar_loss(model.forward(vol.voxels, plan), patches, plan, weights)

    seg = SegModel(cfg)
    seg_params = list(seg.parameters().values())

    def seg_loss() -> Tensor:
        return dice_ce_loss(seg.forward(vol.voxels), vol.labels)

    return [
        ("asa_model_full", 1e-3, model_params, asa_loss),
        ("seg_model_full", 1e-3, seg_params, seg_loss),
    ]


def run_suite(include_models: bool = True, seed: int = 0) -> list[CheckResult]:
    """Run every check; model checks are the slow tail and can be skipped."""
    rng = np.random.default_rng(seed)
    checks = _primitive_checks(rng) + _attention_checks(rng)
    if include_models:
        checks = checks + _model_checks()
    results = []
    for name, tol, params, fn in checks:
        eps = 1e-5 if name.endswith("_full") else 1e-6
        err = check_gradients(fn, params, eps=eps)
        results.append(CheckResult(name=name, max_err=err, tol=tol, ok=err < tol))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        mark = "ok  " if r.ok else "FAIL"
        lines.append(f"{mark} {r.name:<22} max_err={r.max_err:.3e} tol={r.tol:.0e}")
    return "\n".join(lines)
