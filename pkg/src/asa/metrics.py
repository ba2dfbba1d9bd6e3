"""Segmentation quality metrics on integer label volumes.

Dice is the voxel-count overlap ratio; HD95 is the symmetric 95th-percentile
(nearest-rank) distance between six-connected surface voxel sets.  Volume
boundaries count as background when extracting surfaces.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation


def _check_pair(pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape or pred.ndim != 3:
        raise ContractViolation(
            f"label volumes must be 3-D and same shape: {pred.shape} vs {ref.shape}"
        )


def dice_metric(pred: np.ndarray, ref: np.ndarray, cls: int) -> float:
    """2|P & R| / (|P| + |R|); both sides empty scores 1."""
    _check_pair(pred, ref)
    p = pred == cls
    r = ref == cls
    inter = int(np.count_nonzero(p & r))
    p_count = int(np.count_nonzero(p))
    r_count = int(np.count_nonzero(r))
    if p_count + r_count == 0:
        return 1.0
    return (2.0 * inter) / (p_count + r_count)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """(k, 3) coordinates of foreground voxels with a six-neighbor background
    (out-of-volume neighbors count as background)."""
    if mask.ndim != 3:
        raise ContractViolation(f"mask must be 3-D, got shape {mask.shape}")
    m = mask.astype(bool)
    p = np.pad(m, 1, constant_values=False)
    interior = (
        p[2:, 1:-1, 1:-1] & p[:-2, 1:-1, 1:-1]
        & p[1:-1, 2:, 1:-1] & p[1:-1, :-2, 1:-1]
        & p[1:-1, 1:-1, 2:] & p[1:-1, 1:-1, :-2]
    )
    return np.argwhere(m & ~interior)


def _nearest_rank_percentile(dists: np.ndarray, q: float) -> float:
    srt = np.sort(dists)
    rank = math.ceil(q * len(srt))
    return float(srt[rank - 1])


def hd95_metric(pred: np.ndarray, ref: np.ndarray, cls: int) -> float:
    """Max of the two directed 95th-percentile surface distances.

    Both sides empty: 0.  Exactly one side empty: inf.
    """
    _check_pair(pred, ref)
    a = surface_voxels(pred == cls)
    b = surface_voxels(ref == cls)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return max(
        _nearest_rank_percentile(d_ab, 0.95),
        _nearest_rank_percentile(d_ba, 0.95),
    )
