"""Cube patch extraction and random masking plans.

Patches are s*s*s cubes on a regular grid; the flat patch index is
t * H' * W' + h * W' + w with w fastest, and voxels inside each patch are
flattened in the same C order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class PatchGrid:
    """Patch size plus per-axis patch counts (T', H', W')."""

    patch_size: int
    counts: tuple[int, int, int]

    @classmethod
    def for_dims(cls, dims: tuple[int, int, int], patch_size: int) -> "PatchGrid":
        if patch_size < 1:
            raise ContractViolation(f"patch_size must be >= 1, got {patch_size}")
        for name, d in zip("THW", dims):
            if d % patch_size != 0:
                raise ContractViolation(
                    f"axis {name}={d} is not divisible by patch size {patch_size}"
                )
        return cls(patch_size=patch_size, counts=tuple(d // patch_size for d in dims))

    @property
    def n_patches(self) -> int:
        t, h, w = self.counts
        return t * h * w

    @property
    def voxels_per_patch(self) -> int:
        return self.patch_size**3

    def patch_coord(self, index: int) -> tuple[int, int, int]:
        """Flat index -> (t, h, w) grid coordinate."""
        t_n, h_n, w_n = self.counts
        if not (0 <= index < self.n_patches):
            raise ContractViolation(f"patch index {index} out of range [0, {self.n_patches})")
        t, rest = divmod(index, h_n * w_n)
        h, w = divmod(rest, w_n)
        return t, h, w

    def patch_index(self, t: int, h: int, w: int) -> int:
        t_n, h_n, w_n = self.counts
        if not (0 <= t < t_n and 0 <= h < h_n and 0 <= w < w_n):
            raise ContractViolation(f"patch coord ({t}, {h}, {w}) outside grid {self.counts}")
        return t * h_n * w_n + h * w_n + w


@dataclass(frozen=True)
class MaskPlan:
    """A seeded split of patch indices into masked and visible sets."""

    mask_ratio: float
    seed: int
    masked: tuple[int, ...]
    visible: tuple[int, ...]

    @property
    def n_masked(self) -> int:
        return len(self.masked)


def make_mask_plan(n_patches: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Uniformly sample round(mask_ratio * n) patches to mask.

    Rounding is half-up (floor(x + 0.5)).  Plans that mask nothing or
    everything are rejected: the loss needs masked patches and the encoder
    needs visible ones.
    """
    if n_patches < 2:
        raise ContractViolation(f"need at least 2 patches, got {n_patches}")
    if not (0.0 < mask_ratio < 1.0):
        raise ContractViolation(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    n_masked = int(math.floor(mask_ratio * n_patches + 0.5))
    if n_masked == 0 or n_masked == n_patches:
        raise ContractViolation(
            f"mask_ratio {mask_ratio} with {n_patches} patches leaves no "
            f"{'masked' if n_masked == 0 else 'visible'} patches"
        )
    perm = np.random.default_rng(seed).permutation(n_patches)
    masked = tuple(sorted(int(i) for i in perm[:n_masked]))
    visible = tuple(sorted(int(i) for i in perm[n_masked:]))
    return MaskPlan(mask_ratio=mask_ratio, seed=seed, masked=masked, visible=visible)


def patchify(voxels: np.ndarray, patch_size: int) -> np.ndarray:
    """(T, H, W) -> (n_patches, s^3), preserving dtype."""
    if voxels.ndim != 3:
        raise ContractViolation(f"expected a 3-D array, got shape {voxels.shape}")
    grid = PatchGrid.for_dims(voxels.shape, patch_size)
    s = patch_size
    t_n, h_n, w_n = grid.counts
    blocks = voxels.reshape(t_n, s, h_n, s, w_n, s)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks).reshape(grid.n_patches, s**3)


def unpatchify(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """(n_patches, s^3) -> (T, H, W); exact inverse of patchify."""
    s = grid.patch_size
    if patches.shape != (grid.n_patches, s**3):
        raise ContractViolation(
            f"patches shape {patches.shape} != ({grid.n_patches}, {s ** 3})"
        )
    t_n, h_n, w_n = grid.counts
    blocks = patches.reshape(t_n, h_n, w_n, s, s, s)
    blocks = blocks.transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(blocks).reshape(t_n * s, h_n * s, w_n * s)
