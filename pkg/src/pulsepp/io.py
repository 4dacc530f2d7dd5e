"""Binary raster files, PGM export and JSON manifests."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FloatRaster",
    "RasterFormatError",
    "raster_write",
    "raster_read",
    "pgm_export",
    "image_raster",
    "write_json",
    "read_json",
]

_MAGIC = b"LMFR"
_HEADER = struct.Struct("<4sIII")


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FloatRaster:
    """Float32 raster, stored as ``(height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError("raster data must be 2-D or 3-D")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c].astype(np.float64)


def image_raster(img) -> FloatRaster:
    return FloatRaster(np.asarray(img))


def raster_write(path, raster: FloatRaster) -> None:
    """``LMFR``: magic, u32 width/height/channels, float32 payload, CRC32 (little-endian)."""
    body = _HEADER.pack(_MAGIC, raster.width, raster.height, raster.channels)
    body += raster.data.astype("<f4").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def raster_read(path) -> FloatRaster:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4 or raw[:4] != _MAGIC:
        raise RasterFormatError(f"{path}: not an LMFR raster")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise RasterFormatError(f"{path}: checksum mismatch")
    _, w, h, c = _HEADER.unpack_from(body)
    payload = body[_HEADER.size:]
    if len(payload) != w * h * c * 4:
        raise RasterFormatError(f"{path}: payload length does not match header")
    return FloatRaster(np.frombuffer(payload, dtype="<f4").reshape(h, w, c))


def pgm_export(path, raster: FloatRaster, channel: int = 0) -> None:
    """16-bit binary PGM of one channel, ``[0, 1]`` mapped onto ``0..65535``."""
    plane = np.clip(raster.data[:, :, channel].astype(np.float64), 0.0, 1.0)
    q = np.round(plane * 65535.0).astype(">u2")
    header = f"P5\n{raster.width} {raster.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
