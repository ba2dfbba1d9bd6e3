"""Checkpoint container round-trips and corruption handling."""

import struct

import numpy as np
import pytest

from asa.checkpoint import (
    MAGIC,
    Checkpoint,
    load_checkpoint,
    load_parameters,
    save_checkpoint,
    save_records,
)
from asa.config import RunConfig
from asa.errors import ContractViolation, CorruptionError, FormatError
from asa.tensor import parameter


def small_payload():
    rng = np.random.default_rng(7)
    params = {
        "embed.w": rng.normal(size=(12, 6)),
        "embed.b": np.zeros(6),
        "head.w": rng.normal(size=(6, 12)),
    }
    opt = {
        "embed.w": {"m": rng.normal(size=(12, 6)), "v": rng.random((12, 6))},
        "head.w": {"m": rng.normal(size=(6, 12)), "v": rng.random((6, 12))},
    }
    config = {"seed": 3, "dims": [16, 16, 16], "mask_ratio": 0.75}
    return config, params, opt


class TestRoundTrip:
    def test_values_survive(self, tmp_path):
        """Every array comes back bit-exact with its name."""
        config, params, opt = small_payload()
        path = tmp_path / "run.asac"
        save_checkpoint(path, config, params, opt, step=41)
        ckpt = load_checkpoint(path)
        assert ckpt.config == config
        assert ckpt.step == 41
        loaded = ckpt.params()
        assert set(loaded) == set(params)
        for name in params:
            assert loaded[name].tobytes() == np.asarray(params[name]).tobytes()
        state = ckpt.opt_state()
        assert set(state) == set(opt)
        for name in opt:
            for slot in ("m", "v"):
                assert state[name][slot].tobytes() == opt[name][slot].tobytes()

    def test_save_load_save_identical_bytes(self, tmp_path):
        """Re-saving a loaded checkpoint reproduces the file byte for byte."""
        config, params, opt = small_payload()
        first = tmp_path / "a.asac"
        second = tmp_path / "b.asac"
        save_checkpoint(first, config, params, opt, step=12)
        ckpt = load_checkpoint(first)
        save_records(second, ckpt.config, ckpt.records)
        assert first.read_bytes() == second.read_bytes()

    def test_resave_through_split_accessors(self, tmp_path):
        """params()/opt_state()/step carry everything needed to rebuild."""
        config, params, opt = small_payload()
        first = tmp_path / "a.asac"
        second = tmp_path / "b.asac"
        save_checkpoint(first, config, params, opt, step=5)
        ckpt = load_checkpoint(first)
        save_checkpoint(second, ckpt.config, ckpt.params(), ckpt.opt_state(), ckpt.step)
        assert first.read_bytes() == second.read_bytes()

    def test_run_config_round_trip(self, tmp_path):
        """A RunConfig serialized into the header reconstructs equal."""
        cfg = RunConfig(total_steps=20, n_volumes=2)
        path = tmp_path / "cfg.asac"
        save_checkpoint(path, cfg.to_dict(), {"p": np.ones(3)})
        back = RunConfig.from_dict(load_checkpoint(path).config)
        assert back == cfg

    def test_scalar_and_empty_state(self, tmp_path):
        """Missing optimizer state and rank-0 records are fine."""
        path = tmp_path / "bare.asac"
        save_checkpoint(path, {}, {"w": np.arange(4.0)}, opt_state=None, step=0)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 0
        assert ckpt.opt_state() == {}
        assert ckpt.records["meta/step"].shape == ()


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.asac"
        save_checkpoint(path, {}, {"w": np.ones(2)})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.asac"
        save_checkpoint(path, {}, {"w": np.ones(2)})
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.asac"
        save_checkpoint(path, {}, {"w": np.ones(8)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "x.asac"
        save_checkpoint(path, {}, {"w": np.ones(2)})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_bad_config_json(self, tmp_path):
        path = tmp_path / "x.asac"
        cfg = b"{not json"
        blob = MAGIC + bytes([1]) + struct.pack("<I", len(cfg)) + cfg
        blob += struct.pack("<I", 0)
        path.write_bytes(blob)
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_duplicate_record(self, tmp_path):
        path = tmp_path / "x.asac"
        rec = struct.pack("<I", 1) + b"w" + struct.pack("<II", 1, 1) + struct.pack("<d", 0.0)
        blob = MAGIC + bytes([1]) + struct.pack("<I", 2) + b"{}" + rec + rec
        blob += struct.pack("<I", 0)
        path.write_bytes(blob)
        with pytest.raises(CorruptionError):
            load_checkpoint(path)

    def test_missing_terminator(self, tmp_path):
        path = tmp_path / "x.asac"
        save_checkpoint(path, {}, {"w": np.ones(2)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CorruptionError):
            load_checkpoint(path)


class TestLoadParameters:
    def test_copies_by_name(self):
        """Arrays land in the matching tensors, bit-exact."""
        live = {"a": parameter(np.zeros((2, 3))), "b": parameter(np.zeros(3))}
        saved = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(3)}
        load_parameters(live, saved)
        assert live["a"].data.tobytes() == saved["a"].tobytes()
        assert live["b"].data.tobytes() == saved["b"].tobytes()

    def test_missing_rejected(self):
        live = {"a": parameter(np.zeros(2)), "b": parameter(np.zeros(2))}
        with pytest.raises(ContractViolation):
            load_parameters(live, {"a": np.zeros(2)})

    def test_extra_rejected(self):
        live = {"a": parameter(np.zeros(2))}
        with pytest.raises(ContractViolation):
            load_parameters(live, {"a": np.zeros(2), "zz": np.zeros(1)})

    def test_shape_mismatch_rejected(self):
        live = {"a": parameter(np.zeros((2, 2)))}
        with pytest.raises(ContractViolation):
            load_parameters(live, {"a": np.zeros((4,))})

    def test_checkpoint_dataclass_defaults(self):
        """A checkpoint with no meta/step reports step 0."""
        ckpt = Checkpoint(config={}, records={"param/w": np.ones(1)})
        assert ckpt.step == 0
        assert list(ckpt.params()) == ["w"]
