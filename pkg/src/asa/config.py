"""Run configuration for pretraining, fine-tuning, and the CLI.

Defaults are desk-scale so the whole pipeline runs in seconds on a laptop:
32^3 volumes, 8-voxel patches (a 4x4x4 patch grid), batch 4, and a base lr
tuned for that regime.  The reference full-scale settings (96^3 crops,
batch 96, base lr 1.5e-4 with AdamW betas 0.9/0.95 and wd 0.05; SGD
momentum 0.99, lr 0.01, wd 3e-5, poly power 0.9, batch 2 for fine-tuning)
use the same keys; see the README table for both columns side by side.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .attention import AttentionConfig
from .errors import ContractViolation
from .optim import OptimizerConfig, SgdConfig
from .patching import PatchGrid


@dataclass(frozen=True)
class RunConfig:
    # data and geometry
    seed: int = 42
    dims: tuple[int, int, int] = (32, 32, 32)
    patch_size: int = 8
    n_volumes: int = 8
    n_eval_volumes: int = 4
    n_structures: int = 4
    n_lesions: int = 2
    noise_sigma: float = 0.12

    # masking and loss weighting
    mask_ratio: float = 0.75
    bins: int = 8
    weighting: str = "attentive"  # attentive | uniform
    encoding: str = "spe"  # spe | vanilla

    # encoder / decoder widths
    dim: int = 64
    n_heads: int = 4
    window: int = 16
    enc_depth: int = 4
    dec_dim: int = 32
    dec_heads: int = 4
    dec_depth: int = 2
    mlp_ratio: int = 4

    # pretraining optimizer (desk-scale lr; reference value is 1.5e-4)
    base_lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    warmup_start_lr: float = 1e-6
    total_steps: int = 200
    batch_size: int = 4

    # fine-tuning (desk-scale lr; reference value is 0.01)
    n_classes: int = 3
    ft_lr: float = 1e-3
    ft_momentum: float = 0.99
    ft_weight_decay: float = 3e-5
    ft_poly_power: float = 0.9
    ft_steps: int = 300
    ft_batch_size: int = 2
    ft_freeze_frac: float = 0.2
    seg_c1: int = 16
    seg_c2: int = 8

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3:
            raise ContractViolation(f"dims must have three axes, got {self.dims}")
        if self.weighting not in ("attentive", "uniform"):
            raise ContractViolation(f"weighting must be attentive|uniform, got {self.weighting!r}")
        if self.encoding not in ("spe", "vanilla"):
            raise ContractViolation(f"encoding must be spe|vanilla, got {self.encoding!r}")
        if not (0.0 < self.mask_ratio < 1.0):
            raise ContractViolation(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.bins < 1:
            raise ContractViolation(f"bins must be >= 1, got {self.bins}")
        if self.dim % 2 or self.dec_dim % 2:
            raise ContractViolation("encoder and decoder dims must be even")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ContractViolation(f"warmup_frac must lie in [0, 1], got {self.warmup_frac}")
        if not (0.0 <= self.ft_freeze_frac <= 1.0):
            raise ContractViolation(
                f"ft_freeze_frac must lie in [0, 1], got {self.ft_freeze_frac}"
            )
        for name in ("n_volumes", "n_eval_volumes", "batch_size", "total_steps",
                     "ft_steps", "ft_batch_size", "n_classes", "seg_c1", "seg_c2"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        # attention configs validate the rest (divisibility, depth parity)
        self.encoder_attention()
        self.decoder_attention()
        self.patch_grid()

    # derived views -------------------------------------------------------

    def patch_grid(self) -> PatchGrid:
        return PatchGrid.for_dims(self.dims, self.patch_size)

    def encoder_attention(self) -> AttentionConfig:
        return AttentionConfig(
            dim=self.dim, n_heads=self.n_heads, window=self.window,
            depth=self.enc_depth, mlp_ratio=self.mlp_ratio,
        )

    def decoder_attention(self) -> AttentionConfig:
        return AttentionConfig(
            dim=self.dec_dim, n_heads=self.dec_heads, window=self.window,
            depth=self.dec_depth, mlp_ratio=self.mlp_ratio,
        )

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.total_steps))

    @property
    def ft_freeze_steps(self) -> int:
        return int(round(self.ft_freeze_frac * self.ft_steps))

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            base_lr=self.base_lr, beta1=self.beta1, beta2=self.beta2,
            weight_decay=self.weight_decay, warmup_steps=self.warmup_steps,
            total_steps=self.total_steps, warmup_start_lr=self.warmup_start_lr,
        )

    def sgd_config(self) -> SgdConfig:
        return SgdConfig(
            base_lr=self.ft_lr, momentum=self.ft_momentum,
            weight_decay=self.ft_weight_decay, poly_power=self.ft_poly_power,
            total_steps=self.ft_steps,
        )

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractViolation(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ContractViolation(f"{path}: config root must be an object")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
