"""Segmentation head on the pretrained encoder, its loss, and fine-tuning.

The encoder (patch embed + windowed transformer) produces stride-s tokens.
A mid-depth tap and the final output are layer-normalized (fresh affine
owned by the head, so feature scale at the head input is the same whether
the encoder arrives pretrained or random), mapped back to the voxel grid,
upsampled x2 (trilinear), fused by a 3x3x3 conv, upsampled x4 to full
resolution, refined by a second conv, and classified per voxel with a 1x1x1
projection.  Only the encoder weights transfer from pretraining; the rest
trains from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import SwViT, patch_embed
from .config import RunConfig
from .encoding import make_table
from .errors import ContractViolation, TrainingError
from .metrics import dice_metric, hd95_metric
from .model import plan_seed
from .optim import SgdConfig, sgd_step, xavier_uniform
from .patching import PatchGrid, patchify
from .tensor import (
    Tensor,
    concat,
    constant,
    conv3d,
    div,
    exp,
    gather,
    gelu,
    grad,
    layer_norm,
    log,
    parameter,
    reshape,
    slice_rows,
    softmax,
    square,
    tmean,
    transpose,
    tsum,
)
from .volume import Volume, augment

_DICE_EPS = 1e-5


def _axis_lerp(n_in: int, factor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices (i0, i1) and fraction for one upsampled axis
    (align-corners-false convention, edges clamped)."""
    out = np.arange(n_in * factor, dtype=np.float64)
    src = (out + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def trilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """(C, T, H, W) -> (C, fT, fH, fW) differentiable trilinear upsampling."""
    if x.ndim != 4:
        raise ContractViolation(f"expected (C, T, H, W), got shape {x.shape}")
    if factor < 1:
        raise ContractViolation(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    c, t, h, w = x.shape
    z0, z1, fz = _axis_lerp(t, factor)
    y0, y1, fy = _axis_lerp(h, factor)
    x0, x1, fx = _axis_lerp(w, factor)

    flat = transpose(reshape(x, (c, t * h * w)), (1, 0))  # (THW, C)
    to, ho, wo = t * factor, h * factor, w * factor

    def grid3(az, ay, ax):
        return (
            az[:, None, None] * (h * w) + ay[None, :, None] * w + ax[None, None, :]
        ).reshape(-1)

    wz = (1.0 - fz, fz)
    wy = (1.0 - fy, fy)
    wx = (1.0 - fx, fx)
    zs = (z0, z1)
    ys = (y0, y1)
    xs = (x0, x1)

    acc = None
    for a in (0, 1):
        for b in (0, 1):
            for d in (0, 1):
                wgt = (
                    wz[a][:, None, None] * wy[b][None, :, None] * wx[d][None, None, :]
                ).reshape(-1, 1)
                term = gather(flat, grid3(zs[a], ys[b], xs[d])) * constant(wgt)
                acc = term if acc is None else acc + term
    return reshape(transpose(acc, (1, 0)), (c, to, ho, wo))


class SegModel:
    """Encoder plus convolutional decoder producing per-voxel class logits."""

    def __init__(
        self,
        cfg: RunConfig,
        seed: int | None = None,
        encoder_init: dict[str, np.ndarray] | None = None,
    ):
        if cfg.patch_size % 2 != 0:
            raise ContractViolation(
                f"segmentation decodes at stride 2 then {cfg.patch_size}//2, "
                f"so patch_size must be even (got {cfg.patch_size})"
            )
        self.cfg = cfg
        self.grid: PatchGrid = cfg.patch_grid()
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        s3 = cfg.patch_size**3

        self.embed_w = parameter(xavier_uniform((s3, cfg.dim), rng))
        self.embed_b = parameter(np.zeros(cfg.dim))
        self.encoder = SwViT.build(cfg.encoder_attention(), rng)
        self.enc_pe = make_table(cfg.encoding, self.grid, cfg.dim).table

        # no rng draws here: keeps the Xavier stream identical across versions
        self.norm_deep_g = parameter(np.ones(cfg.dim))
        self.norm_deep_b = parameter(np.zeros(cfg.dim))
        self.norm_mid_g = parameter(np.ones(cfg.dim))
        self.norm_mid_b = parameter(np.zeros(cfg.dim))

        c1, c2 = cfg.seg_c1, cfg.seg_c2
        self.conv1_w = parameter(xavier_uniform((c1, 2 * cfg.dim, 3, 3, 3), rng))
        self.conv1_b = parameter(np.zeros(c1))
        self.conv2_w = parameter(xavier_uniform((c2, c1, 3, 3, 3), rng))
        self.conv2_b = parameter(np.zeros(c2))
        self.cls_w = parameter(xavier_uniform((c2, cfg.n_classes), rng))
        self.cls_b = parameter(np.zeros(cfg.n_classes))

        if encoder_init is not None:
            self.load_encoder(encoder_init)

    def encoder_parameters(self) -> dict[str, Tensor]:
        params = {"embed.w": self.embed_w, "embed.b": self.embed_b}
        params.update(self.encoder.named_parameters("encoder"))
        return params

    def parameters(self) -> dict[str, Tensor]:
        params = self.encoder_parameters()
        params.update({
            "seg.norm_deep.g": self.norm_deep_g, "seg.norm_deep.b": self.norm_deep_b,
            "seg.norm_mid.g": self.norm_mid_g, "seg.norm_mid.b": self.norm_mid_b,
            "seg.conv1.w": self.conv1_w, "seg.conv1.b": self.conv1_b,
            "seg.conv2.w": self.conv2_w, "seg.conv2.b": self.conv2_b,
            "seg.cls.w": self.cls_w, "seg.cls.b": self.cls_b,
        })
        return params

    def load_encoder(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy pretrained encoder weights in, name by name, bit-exactly."""
        own = self.encoder_parameters()
        missing = [name for name in own if name not in arrays]
        if missing:
            raise ContractViolation(f"encoder init is missing {missing[:3]}...")
        for name, tensor in own.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != tensor.data.shape:
                raise ContractViolation(
                    f"encoder init {name!r}: shape {src.shape} != {tensor.data.shape}"
                )
            tensor.data = src.copy()

    def forward(self, voxels: np.ndarray) -> Tensor:
        """(T, H, W) intensities -> (n_classes, T, H, W) logits."""
        if voxels.shape != tuple(self.cfg.dims):
            raise ContractViolation(
                f"volume shape {voxels.shape} != configured dims {self.cfg.dims}"
            )
        cfg = self.cfg
        gt, gh, gw = self.grid.counts
        patches = patchify(voxels, cfg.patch_size).astype(np.float64)
        tokens = patch_embed(patches, self.embed_w, self.embed_b)
        tokens = tokens + constant(self.enc_pe)
        mid_tap = cfg.enc_depth // 2
        deep, taps = self.encoder.forward(tokens, taps=(mid_tap,))
        deep = layer_norm(deep, self.norm_deep_g, self.norm_deep_b)
        mid = layer_norm(taps[mid_tap], self.norm_mid_g, self.norm_mid_b)

        def to_volume(tok: Tensor) -> Tensor:
            return reshape(transpose(tok, (1, 0)), (cfg.dim, gt, gh, gw))

        fused = concat([trilinear_upsample(to_volume(deep), 2),
                        trilinear_upsample(to_volume(mid), 2)], axis=0)
        h1 = gelu(conv3d(fused, self.conv1_w, self.conv1_b))
        h1 = trilinear_upsample(h1, cfg.patch_size // 2)
        h2 = gelu(conv3d(h1, self.conv2_w, self.conv2_b))

        t_dim, h_dim, w_dim = cfg.dims
        flat = transpose(reshape(h2, (cfg.seg_c2, t_dim * h_dim * w_dim)), (1, 0))
        logits = transpose(flat @ self.cls_w + self.cls_b, (1, 0))
        return reshape(logits, (cfg.n_classes, t_dim, h_dim, w_dim))


def dice_ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy plus mean soft-Dice loss over foreground classes."""
    n_classes = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise ContractViolation(
            f"labels shape {labels.shape} != logits spatial shape {logits.shape[1:]}"
        )
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractViolation(
            f"labels must lie in [0, {n_classes}), found [{labels.min()}, {labels.max()}]"
        )
    n = labels.size
    flat = transpose(reshape(logits, (n_classes, n)), (1, 0))  # (n, C)
    y = labels.reshape(-1)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    # cross-entropy via a stable log-sum-exp (max is treated as a constant)
    row_max = constant(flat.data.max(axis=1, keepdims=True))
    lse = log(tsum(exp(flat - row_max), axis=1)) + reshape(row_max, (n,))
    picked = tsum(flat * constant(onehot), axis=1)
    ce = tmean(lse - picked)

    # soft Dice on softmax probabilities, foreground classes only
    probs_t = transpose(softmax(flat, axis=1), (1, 0))  # (C, n)
    dice_total = None
    for cls in range(1, n_classes):
        p = reshape(slice_rows(probs_t, cls, cls + 1), (n,))
        target = onehot[:, cls]
        inter = tsum(p * constant(target))
        denom = tsum(p) + float(target.sum())
        dice = div(inter * 2.0 + _DICE_EPS, denom + _DICE_EPS)
        miss = 1.0 - dice
        dice_total = miss if dice_total is None else dice_total + miss
    if n_classes > 1:
        return ce + dice_total * (1.0 / (n_classes - 1))
    return ce


def predict_labels(model: SegModel, voxels: np.ndarray) -> np.ndarray:
    """Argmax class per voxel as uint8."""
    logits = model.forward(voxels).data
    return np.argmax(logits, axis=0).astype(np.uint8)


def finetune_step(
    batch: list[tuple[int, Volume]],
    model: SegModel,
    params: dict[str, Tensor],
    opt_state: dict,
    sgd_cfg: SgdConfig,
    run_seed: int,
    step: int,
) -> float:
    """Augment, forward, Dice+CE, backward, SGD update; returns the loss."""
    total = None
    for idx, vol in batch:
        if vol.labels is None:
            raise ContractViolation("fine-tuning needs labeled volumes")
        aug = augment(vol, seed=plan_seed(run_seed, step, idx))
        loss_v = dice_ce_loss(model.forward(aug.voxels), aug.labels)
        total = loss_v if total is None else total + loss_v
    loss = total * (1.0 / len(batch))
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at fine-tune step {step}")
    grad(loss, params.values())
    sgd_step(params, opt_state, sgd_cfg, step)
    return value


@dataclass
class FinetuneResult:
    model: SegModel
    losses: list[float]


def run_finetune(
    cfg: RunConfig,
    volumes: list[Volume],
    seed: int,
    encoder_init: dict[str, np.ndarray] | None = None,
    log_every: int = 0,
) -> FinetuneResult:
    """Fine-tune on labeled volumes, from scratch or from pretrained weights.

    The first ft_freeze_frac of the step budget updates only the head (the
    encoder stays frozen); the rest trains everything jointly.  Warming the
    head up on fixed features first keeps its initially-random gradients from
    scrambling the encoder, which matters under momentum 0.99.  The schedule
    is the same whichever way the encoder was initialized.
    """
    model = SegModel(cfg, seed=seed, encoder_init=encoder_init)
    params = model.parameters()
    enc_names = set(model.encoder_parameters())
    head = {name: t for name, t in params.items() if name not in enc_names}
    sgd_cfg = cfg.sgd_config()
    opt_state: dict = {}
    losses: list[float] = []
    n_vol = len(volumes)
    for step in range(cfg.ft_steps):
        indices = [(step * cfg.ft_batch_size + k) % n_vol for k in range(cfg.ft_batch_size)]
        batch = [(i, volumes[i]) for i in indices]
        target = head if step < cfg.ft_freeze_steps else params
        value = finetune_step(batch, model, target, opt_state, sgd_cfg, seed, step)
        losses.append(value)
        if log_every and (step % log_every == 0 or step == cfg.ft_steps - 1):
            print(f"ft step {step:5d}  loss {value:.6f}")
    return FinetuneResult(model=model, losses=losses)


def evaluate_segmentation(
    model: SegModel, volumes: list[Volume]
) -> list[dict[str, float]]:
    """Per-volume Dice/HD95 for each foreground class plus the Dice mean."""
    rows = []
    for k, vol in enumerate(volumes):
        if vol.labels is None:
            raise ContractViolation("evaluation needs labeled volumes")
        pred = predict_labels(model, vol.voxels)
        row: dict[str, float] = {"volume": float(k)}
        dices = []
        for cls in range(1, model.cfg.n_classes):
            d = dice_metric(pred, vol.labels, cls)
            row[f"dice_{cls}"] = d
            row[f"hd95_{cls}"] = hd95_metric(pred, vol.labels, cls)
            dices.append(d)
        row["dice_mean"] = sum(dices) / len(dices) if dices else float("nan")
        rows.append(row)
    return rows


def mean_foreground_dice(rows: list[dict[str, float]]) -> float:
    return sum(r["dice_mean"] for r in rows) / len(rows)
