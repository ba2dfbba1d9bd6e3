"""Masked-autoencoder model: encode visible patches, decode all, weighted loss.

The encoder only ever sees visible patch tokens (plus their position
encodings); masked positions enter the decoder as a single shared learnable
token.  The decoder predicts voxels for every patch and the loss scores only
the masked ones, each patch's squared error weighted by its informativeness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import SwViT, patch_embed
from .config import RunConfig
from .encoding import make_table
from .errors import ContractViolation, TrainingError
from .optim import OptimizerConfig, optimizer_step, xavier_uniform
from .patching import MaskPlan, PatchGrid, make_mask_plan, patchify, unpatchify
from .phantom import PhantomSpec, gen_phantom
from .tensor import (
    Tensor,
    concat,
    constant,
    gather,
    grad,
    linear,
    parameter,
    square,
    tmean,
    tsum,
)
from .vhog import compute_gradient_field, patch_histograms, patch_means, weights_from_means
from .volume import Volume, augment


class AsaModel:
    """Encoder/decoder pair over a fixed patch grid."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.grid: PatchGrid = cfg.patch_grid()
        rng = np.random.default_rng(cfg.seed)
        s3 = cfg.patch_size**3

        self.embed_w = parameter(xavier_uniform((s3, cfg.dim), rng))
        self.embed_b = parameter(np.zeros(cfg.dim))
        self.encoder = SwViT.build(cfg.encoder_attention(), rng)
        self.proj_w = parameter(xavier_uniform((cfg.dim, cfg.dec_dim), rng))
        self.proj_b = parameter(np.zeros(cfg.dec_dim))
        self.mask_token = parameter(rng.normal(0.0, 0.02, size=(1, cfg.dec_dim)))
        self.decoder = SwViT.build(cfg.decoder_attention(), rng)
        self.head_w = parameter(xavier_uniform((cfg.dec_dim, s3), rng))
        self.head_b = parameter(np.zeros(s3))

        self.enc_pe = make_table(cfg.encoding, self.grid, cfg.dim).table
        self.dec_pe = make_table(cfg.encoding, self.grid, cfg.dec_dim).table

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "embed.w": self.embed_w,
            "embed.b": self.embed_b,
        }
        params.update(self.encoder.named_parameters("encoder"))
        params.update({
            "proj.w": self.proj_w,
            "proj.b": self.proj_b,
            "mask_token": self.mask_token,
        })
        params.update(self.decoder.named_parameters("decoder"))
        params.update({"head.w": self.head_w, "head.b": self.head_b})
        return params

    def encode_all_patches(self, voxels: np.ndarray) -> Tensor:
        """Encoder over every patch (no masking); used for transfer init checks."""
        patches = patchify(voxels, self.cfg.patch_size).astype(np.float64)
        tokens = patch_embed(patches, self.embed_w, self.embed_b)
        tokens = tokens + constant(self.enc_pe)
        out, _ = self.encoder.forward(tokens)
        return out

    def forward(self, voxels: np.ndarray, plan: MaskPlan) -> Tensor:
        """Reconstruct all patches of one volume: (n_patches, s^3)."""
        if voxels.shape != tuple(self.cfg.dims):
            raise ContractViolation(
                f"volume shape {voxels.shape} != configured dims {self.cfg.dims}"
            )
        n = self.grid.n_patches
        if set(plan.masked) | set(plan.visible) != set(range(n)):
            raise ContractViolation("mask plan does not partition this patch grid")
        patches = patchify(voxels, self.cfg.patch_size).astype(np.float64)
        vis = np.fromiter(plan.visible, dtype=np.intp)
        n_masked = plan.n_masked

        tokens = patch_embed(patches[vis], self.embed_w, self.embed_b)
        tokens = tokens + constant(self.enc_pe[vis])
        encoded, _ = self.encoder.forward(tokens)
        projected = linear(encoded, self.proj_w, self.proj_b)

        mask_tokens = gather(self.mask_token, np.zeros(n_masked, dtype=np.intp))
        stacked = concat([projected, mask_tokens], axis=0)
        # concat row j holds patch (visible + masked)[j]; invert to patch order
        order = np.concatenate([vis, np.fromiter(plan.masked, dtype=np.intp)])
        inverse = np.empty(n, dtype=np.intp)
        inverse[order] = np.arange(n, dtype=np.intp)
        dec_tokens = gather(stacked, inverse) + constant(self.dec_pe)

        decoded, _ = self.decoder.forward(dec_tokens)
        return linear(decoded, self.head_w, self.head_b)


def ar_loss(
    recon: Tensor,
    target_patches: np.ndarray,
    plan: MaskPlan,
    weights: np.ndarray,
) -> Tensor:
    """Weighted reconstruction loss over masked patches.

    Each masked patch contributes weights[k] * mean((recon - target)^2) in
    ascending patch-index order; with uniform weights 1/N this is exactly the
    plain MSE over masked voxels.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (plan.n_masked,):
        raise ContractViolation(
            f"weights shape {weights.shape} != ({plan.n_masked},)"
        )
    if np.any(weights < 0.0):
        raise ContractViolation("weights must be nonnegative")
    masked = np.fromiter(plan.masked, dtype=np.intp)
    pred = gather(recon, masked)
    target = constant(target_patches[masked].astype(np.float64))
    per_patch = tmean(square(pred - target), axis=1)
    return tsum(per_patch * constant(weights))


def reconstruct_volume(volume: Volume, plan: MaskPlan, model: AsaModel) -> Volume:
    """Masked patches from predictions, visible patches from the input."""
    recon = model.forward(volume.voxels, plan).data
    patches = patchify(volume.voxels, model.cfg.patch_size).astype(np.float64)
    out = patches.copy()
    masked = list(plan.masked)
    out[masked] = recon[masked]
    return Volume(voxels=unpatchify(out, model.grid).astype(np.float32))


# ---------------------------------------------------------------------------
# training


@dataclass
class PretrainBatch:
    """Volumes with their per-step mask plans and loss weights."""

    volumes: list[Volume]
    indices: list[int]
    plans: list[MaskPlan]
    weights: list[np.ndarray]


def plan_seed(global_seed: int, step: int, volume_index: int) -> int:
    """Per-(step, volume) mask seed: global XOR step XOR volume index."""
    return global_seed ^ step ^ volume_index


# offsets the augmentation seed stream away from the mask seed stream
_AUG_SEED_SALT = 101


def volume_patch_means(volume: Volume, grid: PatchGrid, bins: int) -> np.ndarray:
    """Informativeness means for every patch of one volume."""
    field = compute_gradient_field(volume.voxels)
    return patch_means(patch_histograms(field, grid, bins))


def build_pretrain_batch(volumes: list[Volume], cfg: RunConfig, step: int) -> PretrainBatch:
    """Select the step's volumes round-robin, augment, and plan their masking.

    Without augmentation the reconstruction task collapses on a small corpus:
    patch content becomes predictable from position alone, so the encoder is
    free to emit near-constant tokens.  Random flips and gamma keep content
    tied to the visible tokens.  Weights are computed on the augmented volume
    (the network's actual input), so there is nothing to cache across steps.
    """
    grid = cfg.patch_grid()
    n_vol = len(volumes)
    indices = [(step * cfg.batch_size + k) % n_vol for k in range(cfg.batch_size)]
    batch_volumes = []
    plans = []
    weights = []
    for idx in indices:
        vol = augment(volumes[idx], seed=plan_seed(cfg.seed + _AUG_SEED_SALT, step, idx))
        batch_volumes.append(vol)
        plan = make_mask_plan(
            grid.n_patches, cfg.mask_ratio, seed=plan_seed(cfg.seed, step, idx)
        )
        plans.append(plan)
        if cfg.weighting == "uniform":
            weights.append(np.full(plan.n_masked, 1.0 / plan.n_masked))
        else:
            means = volume_patch_means(vol, grid, cfg.bins)
            weights.append(weights_from_means(means, plan.masked))
    return PretrainBatch(
        volumes=batch_volumes, indices=indices, plans=plans, weights=weights
    )


def pretrain_step(
    batch: PretrainBatch,
    model: AsaModel,
    params: dict[str, Tensor],
    opt_state: dict,
    opt_cfg: OptimizerConfig,
    step: int,
) -> float:
    """Forward/backward over a batch and one optimizer update; returns loss."""
    total = None
    for vol, plan, w in zip(batch.volumes, batch.plans, batch.weights):
        recon = model.forward(vol.voxels, plan)
        target = patchify(vol.voxels, model.cfg.patch_size)
        loss_v = ar_loss(recon, target, plan, w)
        total = loss_v if total is None else total + loss_v
    loss = total * (1.0 / len(batch.volumes))
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at step {step}")
    grad(loss, params.values())
    optimizer_step(params, opt_state, opt_cfg, step)
    return value


@dataclass
class PretrainResult:
    model: AsaModel
    losses: list[float]
    lrs: list[float]
    opt_state: dict


def make_train_volumes(cfg: RunConfig) -> list[Volume]:
    """The deterministic pretraining/fine-tuning corpus for a config."""
    return [
        gen_phantom(PhantomSpec(
            dims=cfg.dims, seed=cfg.seed + k, n_structures=cfg.n_structures,
            n_lesions=cfg.n_lesions, noise_sigma=cfg.noise_sigma,
        ))
        for k in range(cfg.n_volumes)
    ]


def make_eval_volumes(cfg: RunConfig) -> list[Volume]:
    """Held-out phantoms from a disjoint seed range."""
    return [
        gen_phantom(PhantomSpec(
            dims=cfg.dims, seed=cfg.seed + 1000 + k, n_structures=cfg.n_structures,
            n_lesions=cfg.n_lesions, noise_sigma=cfg.noise_sigma,
        ))
        for k in range(cfg.n_eval_volumes)
    ]


def run_pretraining(cfg: RunConfig, log_every: int = 0) -> PretrainResult:
    """Deterministic end-to-end pretraining loop on generated phantoms."""
    from .optim import lr_at

    volumes = make_train_volumes(cfg)
    model = AsaModel(cfg)
    params = model.parameters()
    opt_cfg = cfg.optimizer_config()
    opt_state: dict = {}
    losses: list[float] = []
    lrs: list[float] = []
    for step in range(cfg.total_steps):
        batch = build_pretrain_batch(volumes, cfg, step)
        value = pretrain_step(batch, model, params, opt_state, opt_cfg, step)
        losses.append(value)
        lrs.append(lr_at(step, opt_cfg))
        if log_every and (step % log_every == 0 or step == cfg.total_steps - 1):
            print(f"step {step:5d}  loss {value:.6f}  lr {lrs[-1]:.2e}")
    return PretrainResult(model=model, losses=losses, lrs=lrs, opt_state=opt_state)
