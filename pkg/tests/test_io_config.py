import json

import numpy as np
import pytest

from pulsepp.config import PRESETS, ConfigError, RunConfig, config_from_dict, config_schema, parse_config
from pulsepp.io import FloatRaster, RasterFormatError, pgm_export, raster_read, raster_write


class TestRaster:
    def test_roundtrip_bitwise(self, tmp_path):
        data = np.random.default_rng(0).standard_normal((5, 7, 3)).astype(np.float32)
        raster_write(tmp_path / "a.lmfr", FloatRaster(data))
        back = raster_read(tmp_path / "a.lmfr")
        assert back.data.tobytes() == data.tobytes()
        assert (back.width, back.height, back.channels) == (7, 5, 3)

    def test_payload_length(self, tmp_path):
        raster_write(tmp_path / "a.lmfr", FloatRaster(np.zeros((4, 6))))
        assert (tmp_path / "a.lmfr").stat().st_size == 16 + 4 * 6 * 4 + 4

    def test_corruption(self, tmp_path):
        p = tmp_path / "a.lmfr"
        raster_write(p, FloatRaster(np.ones((4, 4))))
        raw = bytearray(p.read_bytes())
        raw[20] ^= 1
        p.write_bytes(bytes(raw))
        with pytest.raises(RasterFormatError, match="checksum"):
            raster_read(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "a.lmfr"
        p.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(RasterFormatError):
            raster_read(p)

    def test_pgm_half(self, tmp_path):
        p = tmp_path / "a.pgm"
        pgm_export(p, FloatRaster(np.full((3, 5), 0.5)))
        raw = p.read_bytes()
        header = b"P5\n5 3\n65535\n"
        assert raw.startswith(header)
        vals = np.frombuffer(raw[len(header):], dtype=">u2")
        assert vals.size == 15 and np.all(np.abs(vals.astype(int) - 32768) <= 1)


class TestConfig:
    def test_minimal_defaults(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        c = parse_config(p)
        assert c.sampler.lr == 0.4 and c.sampler.n_steps == 2000

    def test_gamma_range(self):
        with pytest.raises(ConfigError, match=r"sampler\.gamma"):
            config_from_dict({"sampler": {"gamma": 1.5}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"sampler\.lrate"):
            config_from_dict({"sampler": {"lrate": 0.1}})

    def test_type_error(self):
        with pytest.raises(ConfigError, match=r"generator\.k"):
            config_from_dict({"generator": {"k": "big"}})

    def test_roundtrip(self):
        c = config_from_dict({"sampler": {"n_restarts": 4}, "measurement": {"variant": "fanbeam"}})
        again = config_from_dict(json.loads(json.dumps(c.to_dict())))
        assert again == c and again.to_dict() == c.to_dict()

    def test_presets(self):
        mri = config_from_dict({}, preset="mri_toy")
        assert mri.measurement.variant == "fourier" and mri.resolution == 32
        ct = config_from_dict({"measurement": {"fanbeam": {"I0": 1e5}}}, preset="ct_toy")
        assert ct.measurement.fanbeam.I0 == 1e5
        angles = ct.measurement.fanbeam.angles_deg()
        assert angles.size == 40 and angles[0] == 0 and angles[-1] == 119
        assert set(PRESETS) == {"mri_toy", "ct_toy"}
        with pytest.raises(ConfigError):
            config_from_dict({}, preset="nope")

    def test_cross_reference(self):
        with pytest.raises(ConfigError, match=r"measurement\.fourier\.R"):
            config_from_dict({"measurement": {"fourier": {"R": 100}}})

    def test_schema(self):
        schema = config_schema()
        assert schema["additionalProperties"] is False
        assert "sampler" in schema["properties"]

    def test_frozen(self):
        with pytest.raises(Exception):
            RunConfig().output_dir = "x"
