"""Volume container, its on-disk format, cropping, and augmentation.

The file layout is little-endian throughout: a 4-byte magic "ASAV", a version
byte, a flags byte (bit 0 = labels present), two reserved zero bytes, three
u32 dims (T, H, W), T*H*W float32 voxels in C order, then optionally T*H*W
uint8 labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, CorruptionError, FormatError

MAGIC = b"ASAV"
VERSION = 1
_FLAG_LABELS = 0x01
_HEADER = struct.Struct("<4sBBHIII")  # magic, version, flags, reserved, dims


@dataclass
class Volume:
    """A (T, H, W) float32 intensity grid with optional uint8 labels."""

    voxels: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ContractViolation(f"voxels must be 3-D, got shape {self.voxels.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
            if self.labels.shape != self.voxels.shape:
                raise ContractViolation(
                    f"labels shape {self.labels.shape} != voxels shape {self.voxels.shape}"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


def save_volume(volume: Volume, path: str | Path) -> None:
    """Write a volume; round-trips bit-exactly through load_volume."""
    t, h, w = volume.dims
    flags = _FLAG_LABELS if volume.labels is not None else 0
    blob = _HEADER.pack(MAGIC, VERSION, flags, 0, t, h, w)
    blob += volume.voxels.astype("<f4", copy=False).tobytes()
    if volume.labels is not None:
        blob += volume.labels.tobytes()
    Path(path).write_bytes(blob)


def load_volume(path: str | Path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than header")
    magic, version, flags, reserved, t, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flags & ~_FLAG_LABELS or reserved != 0:
        raise FormatError(f"{path}: unknown flags 0x{flags:02x} or nonzero reserved field")
    n = t * h * w
    expected = _HEADER.size + 4 * n + (n if flags & _FLAG_LABELS else 0)
    if len(raw) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = _HEADER.size
    voxels = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(t, h, w)
    labels = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset + 4 * n)
        labels = labels.reshape(t, h, w).copy()
    return Volume(voxels=voxels.copy(), labels=labels)


def center_crop(volume: Volume, out_dims: tuple[int, int, int]) -> Volume:
    """Crop a centered box; labels follow the same window."""
    out_dims = tuple(out_dims)
    for want, have in zip(out_dims, volume.dims):
        if not (1 <= want <= have):
            raise ContractViolation(
                f"crop dims {out_dims} must lie in [1, {volume.dims}] per axis"
            )
    starts = [(have - want) // 2 for want, have in zip(out_dims, volume.dims)]
    sl = tuple(slice(s, s + want) for s, want in zip(starts, out_dims))
    labels = volume.labels[sl] if volume.labels is not None else None
    return Volume(voxels=volume.voxels[sl], labels=labels)


def apply_augment(volume: Volume, flips: tuple[bool, bool, bool], gamma: float) -> Volume:
    """Axis flips plus intensity gamma; gamma=1 with no flips is the identity.

    Gamma assumes nonnegative intensities (phantoms are min-max normalized).
    """
    if gamma <= 0.0:
        raise ContractViolation(f"gamma must be positive, got {gamma}")
    vox = volume.voxels
    labels = volume.labels
    for axis, flip in enumerate(flips):
        if flip:
            vox = np.flip(vox, axis=axis)
            if labels is not None:
                labels = np.flip(labels, axis=axis)
    if gamma != 1.0:
        vox = np.power(vox.astype(np.float64), gamma).astype(np.float32)
    return Volume(voxels=vox, labels=None if labels is None else labels.copy())


def augment(volume: Volume, seed: int) -> Volume:
    """Seeded random flips and gamma in [0.7, 1.5]."""
    rng = np.random.default_rng(seed)
    flips = tuple(bool(b) for b in rng.random(3) < 0.5)
    gamma = float(rng.uniform(0.7, 1.5))
    return apply_augment(volume, flips, gamma)
