"""Checkpoint container: config JSON plus named float64 arrays.

Layout (little-endian): magic "ASAC", one version byte, a u32-length-prefixed
UTF-8 config JSON, then records of (u32 name length, name bytes, u32 rank,
rank u32 dims, float64 payload).  A zero-length name terminates the stream.
The config JSON is canonicalized (sorted keys, no whitespace) and records are
written in sorted name order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, CorruptionError, FormatError
from .tensor import Tensor

MAGIC = b"ASAC"
VERSION = 1
_MAX_RANK = 8

_PARAM = "param/"
_OPT = "opt/"
_META_STEP = "meta/step"


def _canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def save_checkpoint(
    path: str | Path,
    config: dict,
    params: dict[str, Tensor | np.ndarray],
    opt_state: dict[str, dict[str, np.ndarray]] | None = None,
    step: int = 0,
) -> None:
    """Write parameters, optimizer state, and the step counter."""
    records: dict[str, np.ndarray] = {}
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        records[_PARAM + name] = arr
    if opt_state:
        for name, slots in opt_state.items():
            for slot, arr in slots.items():
                records[f"{_OPT}{name}|{slot}"] = arr
    records[_META_STEP] = np.asarray(float(step))
    save_records(path, config, records)


def save_records(path: str | Path, config: dict, records: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob.append(VERSION)
    cfg_bytes = _canonical_json(config).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    for name in sorted(records):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(records[name], dtype=np.float64)
        name_bytes = name.encode("utf-8")
        if not name_bytes:
            raise ContractViolation("record names must be non-empty")
        if arr.ndim > _MAX_RANK:
            raise ContractViolation(f"record {name!r} rank {arr.ndim} > {_MAX_RANK}")
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.astype("<f8", copy=False).tobytes()
    blob += struct.pack("<I", 0)
    Path(path).write_bytes(bytes(blob))


@dataclass
class Checkpoint:
    """Parsed checkpoint: config dict plus all named arrays."""

    config: dict
    records: dict[str, np.ndarray]

    def params(self) -> dict[str, np.ndarray]:
        return {
            name[len(_PARAM):]: arr
            for name, arr in self.records.items()
            if name.startswith(_PARAM)
        }

    def opt_state(self) -> dict[str, dict[str, np.ndarray]]:
        out: dict[str, dict[str, np.ndarray]] = {}
        for name, arr in self.records.items():
            if not name.startswith(_OPT):
                continue
            param_name, _, slot = name[len(_OPT):].rpartition("|")
            out.setdefault(param_name, {})[slot] = arr
        return out

    @property
    def step(self) -> int:
        if _META_STEP not in self.records:
            return 0
        return int(self.records[_META_STEP])


def load_parameters(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy saved arrays into live parameters, matched by name, bit-exactly."""
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise ContractViolation(f"checkpoint is missing parameters {missing[:3]}")
    extra = sorted(set(arrays) - set(params))
    if extra:
        raise ContractViolation(f"checkpoint has unexpected parameters {extra[:3]}")
    for name, tensor in params.items():
        src = np.asarray(arrays[name], dtype=np.float64)
        if src.shape != tensor.data.shape:
            raise ContractViolation(
                f"parameter {name!r}: saved shape {src.shape} != {tensor.data.shape}"
            )
        tensor.data = src.copy()


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CorruptionError(f"{self.path}: truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version = r.take(1)[0]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    cfg_len = r.u32()
    try:
        config = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: bad config payload ({exc})") from exc
    if not isinstance(config, dict):
        raise CorruptionError(f"{path}: config must be a JSON object")

    records: dict[str, np.ndarray] = {}
    while True:
        name_len = r.u32()
        if name_len == 0:
            break
        name = r.take(name_len).decode("utf-8")
        if name in records:
            raise CorruptionError(f"{path}: duplicate record {name!r}")
        rank = r.u32()
        if rank > _MAX_RANK:
            raise CorruptionError(f"{path}: record {name!r} rank {rank} > {_MAX_RANK}")
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(8 * count)
        records[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if r.pos != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(config=config, records=records)
