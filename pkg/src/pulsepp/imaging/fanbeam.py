"""Fan-beam system matrix by exact ray-pixel intersection (Siddon traversal)."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FanBeamGeometry",
    "build_fanbeam",
    "ray_pixel_lengths",
    "xray_intensity",
    "save_sparse",
    "load_sparse",
    "SparseFormatError",
]


def _default_angles():
    return np.arange(120, dtype=float)


@dataclass(frozen=True)
class FanBeamGeometry:
    """Flat-detector fan-beam geometry centred on the image.

    Pixel ``(i, j)`` (row ``i`` from the top) is centred at
    ``x = (j - (n-1)/2) * pitch``, ``y = ((n-1)/2 - i) * pitch``. At view
    angle ``beta`` the source sits at ``source_to_iso_mm * (cos beta, sin beta)``
    and the detector is perpendicular to the central ray on the far side.
    """

    n_pix: int = 32
    pixel_mm: float = 0.82
    source_to_iso_mm: float = 60.0
    iso_to_detector_mm: float = 40.0
    n_detectors: int = 64
    detector_mm: float = 1.4
    angles_deg: np.ndarray = field(default_factory=_default_angles)

    def __post_init__(self):
        angles = np.asarray(self.angles_deg, dtype=float).ravel()
        object.__setattr__(self, "angles_deg", angles)
        if self.n_pix < 1 or self.n_detectors < 1 or angles.size < 1:
            raise ValueError("geometry needs at least one pixel, detector and view")
        if min(self.pixel_mm, self.source_to_iso_mm, self.iso_to_detector_mm, self.detector_mm) <= 0:
            raise ValueError("all distances must be positive")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("view angles must be strictly increasing")
        half_diag = np.sqrt(2.0) * self.n_pix * self.pixel_mm / 2.0
        if self.source_to_iso_mm <= half_diag:
            raise ValueError("source lies inside the image support")

    @property
    def n_views(self) -> int:
        return self.angles_deg.size

    @property
    def M(self) -> int:
        return self.n_views * self.n_detectors

    @property
    def N(self) -> int:
        return self.n_pix**2

    def rays(self):
        """Yield ``(source, detector_point)`` pairs in row order (view-major)."""
        for beta in np.deg2rad(self.angles_deg):
            e = np.array([np.cos(beta), np.sin(beta)])
            u = np.array([-np.sin(beta), np.cos(beta)])
            src = self.source_to_iso_mm * e
            centre = -self.iso_to_detector_mm * e
            offsets = (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_mm
            for off in offsets:
                yield src, centre + off * u

    def to_dict(self) -> dict:
        return {
            "n_pix": self.n_pix,
            "pixel_mm": self.pixel_mm,
            "source_to_iso_mm": self.source_to_iso_mm,
            "iso_to_detector_mm": self.iso_to_detector_mm,
            "n_detectors": self.n_detectors,
            "detector_mm": self.detector_mm,
            "angles_deg": [float(a) for a in self.angles_deg],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FanBeamGeometry":
        d = dict(d)
        d["angles_deg"] = np.asarray(d["angles_deg"], dtype=float)
        return cls(**d)


def ray_pixel_lengths(src, dst, n: int, pitch: float):
    """Intersection lengths of the segment ``src -> dst`` with an ``n x n`` grid.

    Returns ``(flat_pixel_indices, lengths_mm)``.
    """
    src = np.asarray(src, dtype=float)
    d = np.asarray(dst, dtype=float) - src
    half = n * pitch / 2.0
    planes = np.linspace(-half, half, n + 1)
    alphas = [np.array([0.0, 1.0])]
    lo, hi = 0.0, 1.0
    for axis in (0, 1):
        if d[axis] != 0.0:
            a = (planes - src[axis]) / d[axis]
            lo = max(lo, min(a[0], a[-1]))
            hi = min(hi, max(a[0], a[-1]))
            alphas.append(a)
        elif not (-half < src[axis] < half):
            return np.empty(0, dtype=np.int64), np.empty(0)
    if hi <= lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    a = np.concatenate(alphas)
    a = np.unique(a[(a >= lo) & (a <= hi)])
    seg = np.diff(a)
    keep = seg > 1e-14
    mid = 0.5 * (a[1:] + a[:-1])[keep]
    seg = seg[keep]
    x = src[0] + mid * d[0]
    y = src[1] + mid * d[1]
    col = np.clip(np.floor((x + half) / pitch).astype(np.int64), 0, n - 1)
    row = np.clip(np.floor((half - y) / pitch).astype(np.int64), 0, n - 1)
    return row * n + col, seg * np.hypot(d[0], d[1])


def build_fanbeam(geom: FanBeamGeometry) -> sp.csr_matrix:
    """Sparse ``(M, N)`` matrix of path lengths in mm; row ``view * n_det + det``."""
    indptr = [0]
    indices = []
    data = []
    for src, dst in geom.rays():
        idx, length = ray_pixel_lengths(src, dst, geom.n_pix, geom.pixel_mm)
        order = np.argsort(idx, kind="stable")
        indices.append(idx[order])
        data.append(length[order])
        indptr.append(indptr[-1] + idx.size)
    H = sp.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.asarray(indptr)),
        shape=(geom.M, geom.N),
    )
    H.sum_duplicates()
    return H


def xray_intensity(H, f, I0: float, mu_max: float) -> np.ndarray:
    """Mean transmitted photons ``I0 * exp(-H (mu_max f))``."""
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    if mu_max < 0:
        raise ValueError("mu_max must be >= 0")
    f = np.asarray(f, dtype=np.float64).ravel()
    return I0 * np.exp(-(H @ (mu_max * f)))


class SparseFormatError(ValueError):
    pass


_SM_MAGIC = b"LMSM"


def save_sparse(H, path) -> None:
    """``LMSM`` file: magic, u32 rows/cols/nnz, u32 indptr and indices, f64 data, CRC32."""
    H = sp.csr_matrix(H)
    buf = bytearray(_SM_MAGIC)
    buf += struct.pack("<III", H.shape[0], H.shape[1], H.nnz)
    buf += H.indptr.astype("<u4").tobytes()
    buf += H.indices.astype("<u4").tobytes()
    buf += H.data.astype("<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def load_sparse(path) -> sp.csr_matrix:
    raw = Path(path).read_bytes()
    if raw[:4] != _SM_MAGIC:
        raise SparseFormatError("not a sparse matrix file (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise SparseFormatError("sparse matrix checksum mismatch")
    rows, cols, nnz = struct.unpack_from("<III", body, 4)
    off = 16
    indptr = np.frombuffer(body, "<u4", rows + 1, off).astype(np.int64)
    off += 4 * (rows + 1)
    indices = np.frombuffer(body, "<u4", nnz, off).astype(np.int64)
    off += 4 * nnz
    data = np.frombuffer(body, "<f8", nnz, off).copy()
    return sp.csr_matrix((data, indices, indptr), shape=(rows, cols))
