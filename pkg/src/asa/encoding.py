"""Patch position encodings.

Two variants over the patch grid (T', H', W'):

* the symmetric encoding, whose scalar position
  Pos(t, h, w) = T'^2 * t + H' * h - |W'/2 - w| + W'/2
  is invariant under the width mirror w -> W' - w by construction (the |.|
  term is the only place w enters), and
* the vanilla sequence encoding over the flat patch index, which is not.

A position's vector interleaves sin/cos of Pos divided by 10000^(2i/D); for
the symmetric variant i runs 1..D/2 over entry pairs (0,1), (2,3), ...,
for the vanilla variant i runs from 0.  Coordinates are zero-based. Mirror
invariance is exact in floating point: mirrored coordinates produce the
same |W'/2 - w| operand sequence, hence bit-identical vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .patching import PatchGrid


def _check_dim(dim: int) -> None:
    if dim < 2 or dim % 2 != 0:
        raise ContractViolation(f"encoding dim must be even and >= 2, got {dim}")


def spe_position(t: int, h: int, w: int, grid: PatchGrid) -> float:
    """The scalar position fed to every frequency of the symmetric encoding."""
    t_n, h_n, w_n = grid.counts
    if not (0 <= t < t_n and 0 <= h < h_n and 0 <= w < w_n):
        raise ContractViolation(f"patch coord ({t}, {h}, {w}) outside grid {grid.counts}")
    return t_n**2 * t + h_n * h - abs(w_n / 2 - w) + w_n / 2


def spe_vector(t: int, h: int, w: int, grid: PatchGrid, dim: int) -> np.ndarray:
    """Symmetric encoding vector of length `dim` for one patch coordinate."""
    _check_dim(dim)
    pos = spe_position(t, h, w, grid)
    i = np.arange(1, dim // 2 + 1, dtype=np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def vanilla_pe_vector(index: int, dim: int) -> np.ndarray:
    """Classic sin/cos encoding of a flat sequence index."""
    _check_dim(dim)
    if index < 0:
        raise ContractViolation(f"sequence index must be >= 0, got {index}")
    i = np.arange(0, dim // 2, dtype=np.float64)
    angles = index / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class EncodingTable:
    """Per-patch encoding rows, ordered by flat patch index."""

    grid: PatchGrid
    dim: int
    table: np.ndarray  # (n_patches, dim) float64

    def row(self, index: int) -> np.ndarray:
        return self.table[index]


def spe_table(grid: PatchGrid, dim: int) -> EncodingTable:
    _check_dim(dim)
    rows = np.empty((grid.n_patches, dim), dtype=np.float64)
    for idx in range(grid.n_patches):
        t, h, w = grid.patch_coord(idx)
        rows[idx] = spe_vector(t, h, w, grid, dim)
    return EncodingTable(grid=grid, dim=dim, table=rows)


def vanilla_table(grid: PatchGrid, dim: int) -> EncodingTable:
    _check_dim(dim)
    rows = np.empty((grid.n_patches, dim), dtype=np.float64)
    for idx in range(grid.n_patches):
        rows[idx] = vanilla_pe_vector(idx, dim)
    return EncodingTable(grid=grid, dim=dim, table=rows)


def make_table(kind: str, grid: PatchGrid, dim: int) -> EncodingTable:
    if kind == "spe":
        return spe_table(grid, dim)
    if kind == "vanilla":
        return vanilla_table(grid, dim)
    raise ContractViolation(f"unknown encoding kind {kind!r}")
