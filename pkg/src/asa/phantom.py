"""Synthetic labeled head phantoms.

Each phantom is a large centered "head" ellipsoid (label 1) holding a few
smooth internal structures placed as mirror pairs about the mid-sagittal
plane, plus unmirrored "lesion" blobs (label 2).  With no lesions and no
noise the intensity field is bitwise symmetric under a width flip: every
mirrored contribution is added as f + flip(f) and the centered terms are
built from exactly negated coordinates, so IEEE addition keeps both sides
identical to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, PlacementError
from .volume import Volume

_PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and noise knobs for one generated phantom."""

    dims: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    n_structures: int = 4
    n_lesions: int = 2
    noise_sigma: float = 0.12

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or min(dims) < 8:
            raise ContractViolation(f"dims must be three axes of at least 8, got {dims}")
        if self.n_structures < 1:
            raise ContractViolation("n_structures must be >= 1")
        if self.n_lesions < 0:
            raise ContractViolation("n_lesions must be >= 0")
        if self.noise_sigma < 0.0:
            raise ContractViolation("noise_sigma must be >= 0")


def _bump(rho2: np.ndarray) -> np.ndarray:
    """Smooth compact bump: (1 - rho^2)^2 inside the unit ellipsoid, 0 outside."""
    inner = np.maximum(1.0 - rho2, 0.0)
    return inner * inner


def gen_phantom(spec: PhantomSpec) -> Volume:
    """Deterministic labeled phantom for the given spec."""
    t_dim, h_dim, w_dim = spec.dims
    rng = np.random.default_rng(spec.seed)

    zz = np.arange(t_dim, dtype=np.float64)[:, None, None]
    yy = np.arange(h_dim, dtype=np.float64)[None, :, None]
    xx = np.arange(w_dim, dtype=np.float64)[None, None, :]
    ct, ch, cw = (t_dim - 1) / 2.0, (h_dim - 1) / 2.0, (w_dim - 1) / 2.0

    # head ellipsoid; jittered semi-axes keep phantoms distinct across seeds
    az = t_dim * rng.uniform(0.38, 0.45)
    ay = h_dim * rng.uniform(0.40, 0.46)
    ax = w_dim * rng.uniform(0.40, 0.46)
    rho2_head = ((zz - ct) / az) ** 2 + ((yy - ch) / ay) ** 2 + ((xx - cw) / ax) ** 2
    tissue = rho2_head <= 1.0
    field = 0.55 * _bump(rho2_head)

    def head_rho2(cz: float, cy: float, cx: float) -> float:
        return ((cz - ct) / az) ** 2 + ((cy - ch) / ay) ** 2 + ((cx - cw) / ax) ** 2

    for k in range(spec.n_structures):
        for _ in range(_PLACEMENT_TRIES):
            cz = rng.uniform(0.2, 0.8) * (t_dim - 1)
            cy = rng.uniform(0.2, 0.8) * (h_dim - 1)
            cx = rng.uniform(0.08, 0.46) * (w_dim - 1)
            if head_rho2(cz, cy, cx) <= 0.45:
                break
        else:
            raise PlacementError(
                f"structure {k}: no center inside the head ellipsoid "
                f"after {_PLACEMENT_TRIES} tries"
            )
        sz = t_dim * rng.uniform(0.05, 0.12)
        sy = h_dim * rng.uniform(0.05, 0.12)
        sx = w_dim * rng.uniform(0.05, 0.12)
        amp = rng.uniform(-0.3, 0.45)
        rho2 = ((zz - cz) / sz) ** 2 + ((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2
        contrib = amp * _bump(rho2)
        field += contrib + contrib[:, :, ::-1]

    lesion = np.zeros(spec.dims, dtype=bool)
    for k in range(spec.n_lesions):
        for _ in range(_PLACEMENT_TRIES):
            cz = rng.uniform(0.15, 0.85) * (t_dim - 1)
            cy = rng.uniform(0.15, 0.85) * (h_dim - 1)
            cx = rng.uniform(0.15, 0.85) * (w_dim - 1)
            if head_rho2(cz, cy, cx) <= 0.45:
                break
        else:
            raise PlacementError(
                f"lesion {k}: no center inside the head ellipsoid "
                f"after {_PLACEMENT_TRIES} tries"
            )
        radius = min(spec.dims) * rng.uniform(0.07, 0.11)
        rho2 = ((zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2) / radius**2
        field += 0.9 * _bump(rho2)
        lesion |= rho2 <= 1.0

    if spec.noise_sigma > 0.0:
        field = field + rng.normal(0.0, spec.noise_sigma, spec.dims)

    lo, hi = float(field.min()), float(field.max())
    if hi - lo < 1e-12:
        raise ContractViolation("degenerate phantom: constant intensity field")
    normalized = (field - lo) / (hi - lo)

    labels = np.zeros(spec.dims, dtype=np.uint8)
    labels[tissue] = 1
    labels[lesion & tissue] = 2
    return Volume(voxels=normalized.astype(np.float32), labels=labels)
