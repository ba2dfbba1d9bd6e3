"""Gradient-orientation informativeness weights for masked patches.

Each voxel's intensity gradient (centered [-1, 0, 1] differences, replicate
padding) is expressed as a polar angle theta = acos(gz / |g|) and an
azimuth phi = |atan2(gy, gx)|, both in [0, pi].  Per patch, a bins x bins
histogram over (theta, phi) accumulates gradient magnitudes; the histogram
is L2-normalized and its mean is the patch's informativeness.  Restricted to
a mask plan's masked patches and normalized to sum to one, those means become
the per-patch loss weights.

Reproducibility note: results here are defined to the last bit.  Angles use
scalar math.acos / math.atan2 (numpy's SIMD versions differ from libm by one
ulp on a few percent of inputs, which can flip a histogram bin), and every
reduction that an accumulation order could affect is done sequentially.
np.add.at is used for binning; it applies updates in index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .patching import MaskPlan, PatchGrid

_ZERO_TOTAL = 1e-12


@dataclass(frozen=True)
class GradientField:
    """Per-voxel gradients and orientations; angles are 0 where magnitude is 0."""

    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    magnitude: np.ndarray
    theta: np.ndarray
    phi: np.ndarray


def _seq_sum(values: list[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def compute_gradient_field(voxels: np.ndarray) -> GradientField:
    """Centered differences with replicate padding; g = v[i+1] - v[i-1].

    Axis convention: gz runs along axis 0 (T), gy along axis 1 (H), gx along
    axis 2 (W).  A unit ramp along W therefore has g = (2, 0, 0) in (x, y, z)
    order away from the faces.
    """
    if voxels.ndim != 3 or min(voxels.shape) < 3:
        raise ContractViolation(
            f"need a 3-D volume with every axis >= 3, got shape {voxels.shape}"
        )
    vox = voxels.astype(np.float64)
    pad = np.pad(vox, 1, mode="edge")
    gz = pad[2:, 1:-1, 1:-1] - pad[:-2, 1:-1, 1:-1]
    gy = pad[1:-1, 2:, 1:-1] - pad[1:-1, :-2, 1:-1]
    gx = pad[1:-1, 1:-1, 2:] - pad[1:-1, 1:-1, :-2]
    magnitude = np.sqrt(gx * gx + gy * gy + gz * gz)

    theta = np.zeros_like(magnitude)
    phi = np.zeros_like(magnitude)
    nz = magnitude > 0.0
    ratios = (gz[nz] / magnitude[nz]).tolist()
    theta[nz] = np.fromiter((math.acos(r) for r in ratios), dtype=np.float64, count=len(ratios))
    pairs = zip(gy[nz].tolist(), gx[nz].tolist())
    phi[nz] = np.fromiter(
        (abs(math.atan2(y, x)) for y, x in pairs), dtype=np.float64, count=len(ratios)
    )
    return GradientField(gx=gx, gy=gy, gz=gz, magnitude=magnitude, theta=theta, phi=phi)


def patch_histograms(field: GradientField, grid: PatchGrid, bins: int) -> np.ndarray:
    """(n_patches, bins, bins) L2-normalized orientation histograms.

    Bin rows index theta, columns phi, both with width pi/bins; the top edge
    clamps into the last bin.  An all-zero histogram stays all-zero.
    """
    if bins < 1:
        raise ContractViolation(f"bins must be >= 1, got {bins}")
    t_dim, h_dim, w_dim = field.magnitude.shape
    s = grid.patch_size
    if grid.counts != (t_dim // s, h_dim // s, w_dim // s) or (
        t_dim % s or h_dim % s or w_dim % s
    ):
        raise ContractViolation(
            f"grid {grid.counts} x {s} does not tile volume {field.magnitude.shape}"
        )
    binwidth = math.pi / bins
    last = bins - 1
    rows = np.minimum(np.floor(field.theta / binwidth), last).astype(np.intp)
    cols = np.minimum(np.floor(field.phi / binwidth), last).astype(np.intp)

    t_n, h_n, w_n = grid.counts
    pid_z = (np.arange(t_dim, dtype=np.intp) // s)[:, None, None]
    pid_y = (np.arange(h_dim, dtype=np.intp) // s)[None, :, None]
    pid_x = (np.arange(w_dim, dtype=np.intp) // s)[None, None, :]
    pid = pid_z * (h_n * w_n) + pid_y * w_n + pid_x

    keys = pid * (bins * bins) + rows * bins + cols
    nz = field.magnitude > 0.0
    flat = np.zeros(grid.n_patches * bins * bins, dtype=np.float64)
    np.add.at(flat, keys[nz], field.magnitude[nz])
    hists = flat.reshape(grid.n_patches, bins, bins)

    for k in range(grid.n_patches):
        row = hists[k].reshape(-1)
        sq = row * row
        norm = math.sqrt(_seq_sum(sq.tolist()))
        if norm > 0.0:
            row /= norm
    return hists


def patch_means(hists: np.ndarray) -> np.ndarray:
    """Mean histogram value per patch, summed sequentially."""
    n, b1, b2 = hists.shape
    count = b1 * b2
    out = np.empty(n, dtype=np.float64)
    for k in range(n):
        out[k] = _seq_sum(hists[k].reshape(-1).tolist()) / count
    return out


def weights_from_means(means: np.ndarray, masked: tuple[int, ...]) -> np.ndarray:
    """Normalize masked patches' means to a distribution; uniform fallback
    when the masked total is (numerically) zero."""
    n = len(masked)
    if n == 0:
        raise ContractViolation("mask plan has no masked patches")
    selected = [float(means[i]) for i in masked]
    total = _seq_sum(selected)
    if total < _ZERO_TOTAL:
        return np.full(n, 1.0 / n, dtype=np.float64)
    return np.array([m / total for m in selected], dtype=np.float64)


def informativeness_weights(
    voxels: np.ndarray, grid: PatchGrid, plan: MaskPlan, bins: int
) -> np.ndarray:
    """Loss weights over plan.masked (ascending patch index), summing to one."""
    field = compute_gradient_field(voxels)
    hists = patch_histograms(field, grid, bins)
    return weights_from_means(patch_means(hists), plan.masked)
