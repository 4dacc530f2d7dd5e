"""Synthetic test objects and their analytic line integrals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Ellipse", "phantom_generate", "ellipse_set", "ellipse_chord", "square_chord",
           "phantom_line_integral"]

_FLOOR = 0.02
_SUPERSAMPLE = 4


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalized coordinates ``[-1, 1]^2`` adding ``value`` inside."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float
    value: float


def ellipse_set(seed: int) -> list[Ellipse]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x454C]))
    shapes = [Ellipse(0.0, 0.0, 0.85, 0.7, rng.uniform(-0.3, 0.3), 0.3)]
    for _ in range(5):
        r = rng.uniform(0.0, 0.4)
        t = rng.uniform(0, 2 * np.pi)
        shapes.append(Ellipse(r * np.cos(t), r * np.sin(t), rng.uniform(0.08, 0.25),
                              rng.uniform(0.08, 0.25), rng.uniform(0, np.pi),
                              rng.uniform(0.04, 0.1)))
    return shapes


def _ellipse_image(shapes, width, height):
    s = _SUPERSAMPLE
    xs = (np.arange(width * s) + 0.5) / (width * s) * 2 - 1
    ys = 1 - (np.arange(height * s) + 0.5) / (height * s) * 2
    X, Y = np.meshgrid(xs, ys)
    img = np.full(X.shape, _FLOOR)
    for e in shapes:
        c, sn = np.cos(e.theta), np.sin(e.theta)
        u = (X - e.cx) * c + (Y - e.cy) * sn
        v = -(X - e.cx) * sn + (Y - e.cy) * c
        img += e.value * ((u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0)
    return img.reshape(height, s, width, s).mean(axis=(1, 3))


def _checker_image(width, height, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4348]))
    tile = max(1, min(width, height) // 8)
    ox, oy = rng.integers(0, tile, size=2)
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    parity = ((jj + ox) // tile + (ii + oy) // tile) % 2
    return np.where(parity == 0, 0.3, 0.7)


def phantom_generate(kind: str, width: int, height: int, seed: int) -> np.ndarray:
    """Deterministic object in ``(0, 1)``; ``kind`` is ``"ellipses"`` or ``"checker"``."""
    if width < 1 or height < 1:
        raise ValueError("phantom dimensions must be positive")
    if kind == "ellipses":
        return _ellipse_image(ellipse_set(seed), width, height)
    if kind == "checker":
        return _checker_image(width, height, seed)
    raise ValueError(f"unknown phantom kind {kind!r}")


def ellipse_chord(e: Ellipse, p0, direction) -> float:
    """Length of the line ``p0 + t * direction`` inside the ellipse (normalized units)."""
    d = np.asarray(direction, float) / np.linalg.norm(direction)
    c, s = np.cos(e.theta), np.sin(e.theta)
    R = np.array([[c, s], [-s, c]])
    p = R @ (np.asarray(p0, float) - [e.cx, e.cy])
    q = R @ d
    A = (q[0] / e.a) ** 2 + (q[1] / e.b) ** 2
    B = 2 * (p[0] * q[0] / e.a**2 + p[1] * q[1] / e.b**2)
    C = (p[0] / e.a) ** 2 + (p[1] / e.b) ** 2 - 1
    disc = B * B - 4 * A * C
    return float(np.sqrt(disc) / A) if disc > 0 else 0.0


def square_chord(p0, direction, half: float = 1.0) -> float:
    """Length of the line inside the square ``[-half, half]^2`` (slab method)."""
    d = np.asarray(direction, float) / np.linalg.norm(direction)
    p0 = np.asarray(p0, float)
    lo, hi = -np.inf, np.inf
    for k in range(2):
        if abs(d[k]) < 1e-300:
            if abs(p0[k]) > half:
                return 0.0
            continue
        t1, t2 = (-half - p0[k]) / d[k], (half - p0[k]) / d[k]
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    return max(0.0, hi - lo)


def phantom_line_integral(seed: int, p0, direction, half_width_mm: float) -> float:
    """Analytic integral of the ellipse phantom along a line, in value x mm.

    ``p0`` and ``direction`` are in mm with the image centred at the origin.
    """
    scale = half_width_mm
    p = np.asarray(p0, float) / scale
    total = _FLOOR * square_chord(p, direction)
    for e in ellipse_set(seed):
        total += e.value * ellipse_chord(e, p, direction)
    return total * scale
