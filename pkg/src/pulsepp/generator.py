"""Desk-scale style-based generator with exact reverse-mode gradients.

The network mirrors the latent pathways of a StyleGAN at toy size:

* a fully connected mapping network ``z -> w``;
* an invertible transform ``T`` (leaky ReLU followed by affine whitening)
  taking ``w`` to the Gaussianized style space;
* a synthesis stack of ``L`` layers, two per resolution (4, 8, 16, 32, ...),
  each doing 3x3 convolution, additive scaled noise, leaky ReLU and
  adaptive instance normalization driven by one style column;
* a 1x1 output head squashed smoothly into ``(0, 1)``.

Everything runs in float64 numpy; forward evaluations are pure.
"""
from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "GeneratorConfig",
    "GeneratorWeights",
    "TransformParams",
    "LatentWhitener",
    "noise_dims",
    "init_generator",
    "mapping_forward",
    "mapping_jvp",
    "fit_transform",
    "transform_forward",
    "transform_inverse",
    "synthesize",
    "generator_grad",
    "synthesize_with_grad",
    "sample_latent_norm_sq",
    "save_weights",
    "load_weights",
    "weights_file_hash",
    "WeightsFormatError",
]

_IN_EPS = 1e-5
# keeps the output strictly inside (0, 1) even when the logistic saturates
_OUT_MARGIN = 1e-6


def noise_dims(L: int) -> list[int]:
    """Noise vector lengths ``p_l = 4**(1 + ceil(l/2))`` for layers ``l = 1..L``."""
    if L < 1:
        raise ValueError("layer count must be >= 1")
    return [4 ** (1 + math.ceil(l / 2)) for l in range(1, L + 1)]


@dataclass(frozen=True)
class GeneratorConfig:
    k: int = 64
    L: int = 8
    channels: int = 16
    mapping_depth: int = 4
    leaky_slope: float = 0.2

    base_resolution = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.L < 2 or self.L % 2:
            raise ValueError(f"L must be even and >= 2, got {self.L}")
        if self.channels < 1 or self.mapping_depth < 1:
            raise ValueError("channels and mapping_depth must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")

    @property
    def output_resolution(self) -> int:
        return 4 * 2 ** (math.ceil(self.L / 2) - 1)

    @property
    def n_pixels(self) -> int:
        return self.output_resolution**2

    @property
    def noise_dims(self) -> list[int]:
        return noise_dims(self.L)

    def layer_resolution(self, i: int) -> int:
        """Spatial side of 0-based layer ``i``."""
        return 4 * 2 ** (i // 2)


@dataclass(eq=False)
class GeneratorWeights:
    config: GeneratorConfig
    mapping_w: np.ndarray  # (depth, k, k)
    mapping_b: np.ndarray  # (depth, k)
    const: np.ndarray  # (C, 4, 4)
    style_w: np.ndarray  # (L, 2C, k)
    style_b: np.ndarray  # (L, 2C)
    conv_w: np.ndarray  # (L, C_out, C_in, 3, 3)
    conv_b: np.ndarray  # (L, C)
    noise_scale: np.ndarray  # (L,)
    head_w: np.ndarray  # (C,)
    head_b: np.ndarray  # (1,)

    PARAM_NAMES = (
        "mapping_w", "mapping_b", "const", "style_w", "style_b",
        "conv_w", "conv_b", "noise_scale", "head_w", "head_b",
    )

    def __post_init__(self):
        cfg = self.config
        k, L, C, D = cfg.k, cfg.L, cfg.channels, cfg.mapping_depth
        shapes = {
            "mapping_w": (D, k, k), "mapping_b": (D, k), "const": (C, 4, 4),
            "style_w": (L, 2 * C, k), "style_b": (L, 2 * C),
            "conv_w": (L, C, C, 3, 3), "conv_b": (L, C), "noise_scale": (L,),
            "head_w": (C,), "head_b": (1,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # conv kernels in im2col layout (L, 9*C_in, C_out), taps major
        self._conv_mats = np.ascontiguousarray(
            self.conv_w.transpose(0, 3, 4, 2, 1).reshape(L, 9 * C, C)
        )
        self._const_hwc = np.ascontiguousarray(self.const.transpose(1, 2, 0).reshape(16, C))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def replace(self, **updates) -> "GeneratorWeights":
        kw = self.arrays()
        kw.update(updates)
        return GeneratorWeights(self.config, **kw)

    def equals(self, other: "GeneratorWeights") -> bool:
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values())
        )


def _lrelu(x, slope):
    return np.where(x >= 0, x, slope * x)


def _lrelu_grad(x, slope):
    return np.where(x >= 0, 1.0, slope)


def _f32(a: np.ndarray) -> np.ndarray:
    # weights live on the float32 grid so the on-disk format is lossless
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def init_generator(config: GeneratorConfig, seed: int) -> GeneratorWeights:
    """Seeded random weights (no training); deterministic in ``(config, seed)``."""
    if not isinstance(config, GeneratorConfig):
        raise TypeError("config must be a GeneratorConfig")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4C4D4757]))
    k, L, C, D = config.k, config.L, config.channels, config.mapping_depth
    s = config.leaky_slope
    he = math.sqrt(2.0 / ((1.0 + s * s) * k))
    mapping_w = rng.normal(0.0, he, size=(D, k, k))
    # final mapping layer is linear: unit-variance fan-in scaling
    mapping_w[-1] *= math.sqrt((1.0 + s * s) / 2.0)
    mapping_b = rng.normal(0.0, 0.1, size=(D, k))
    const = rng.normal(0.0, 1.0, size=(C, 4, 4))
    style_w = rng.normal(0.0, 0.3 / math.sqrt(k), size=(L, 2 * C, k))
    style_b = rng.normal(0.0, 0.05, size=(L, 2 * C))
    conv_w = rng.normal(0.0, math.sqrt(2.0 / (9 * C)), size=(L, C, C, 3, 3))
    conv_b = rng.normal(0.0, 0.05, size=(L, C))
    noise_scale = rng.uniform(0.1, 0.3, size=L)
    head_w = rng.normal(0.0, 1.5 / math.sqrt(C), size=C)
    head_b = rng.normal(0.0, 0.1, size=1)
    return GeneratorWeights(
        config,
        mapping_w=_f32(mapping_w), mapping_b=_f32(mapping_b), const=_f32(const),
        style_w=_f32(style_w), style_b=_f32(style_b), conv_w=_f32(conv_w),
        conv_b=_f32(conv_b), noise_scale=_f32(noise_scale), head_w=_f32(head_w),
        head_b=_f32(head_b),
    )


# --------------------------------------------------------------------------
# mapping network and transform


def mapping_forward(weights: GeneratorWeights, z) -> np.ndarray:
    """Map ``z`` (shape ``(k,)`` or ``(n, k)``) to intermediate latents ``w``."""
    h = np.asarray(z, dtype=np.float64)
    slope = weights.config.leaky_slope
    depth = weights.config.mapping_depth
    for d in range(depth):
        h = h @ weights.mapping_w[d].T + weights.mapping_b[d]
        if d < depth - 1:
            h = _lrelu(h, slope)
    return h


def mapping_jvp(weights: GeneratorWeights, z, dz) -> np.ndarray:
    """Directional derivative of :func:`mapping_forward` at ``z`` along ``dz``."""
    h = np.asarray(z, dtype=np.float64)
    dh = np.asarray(dz, dtype=np.float64)
    slope = weights.config.leaky_slope
    depth = weights.config.mapping_depth
    for d in range(depth):
        h = h @ weights.mapping_w[d].T + weights.mapping_b[d]
        dh = dh @ weights.mapping_w[d].T
        if d < depth - 1:
            dh = dh * _lrelu_grad(h, slope)
            h = _lrelu(h, slope)
    return dh


@dataclass(frozen=True)
class TransformParams:
    """``T(w) = A (lrelu(w) - mean)`` with ``A`` the symmetric inverse square root
    of the (regularized) covariance of ``lrelu(w)``."""

    mean: np.ndarray
    whitening: np.ndarray
    unwhitening: np.ndarray
    leaky_slope: float = 0.2

    def __post_init__(self):
        for name in ("mean", "whitening", "unwhitening"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.isfinite(np.linalg.cond(self.whitening)):
            raise ValueError("whitening matrix is singular")

    @property
    def k(self) -> int:
        return self.mean.size


def _whitening_from_samples(u: np.ndarray, slope: float) -> TransformParams:
    k = u.shape[1]
    mean = u.mean(axis=0)
    cov = np.cov(u, rowvar=False)
    cov = cov + 1e-6 * (np.trace(cov) / k) * np.eye(k)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 0:
        raise ValueError("sample covariance is not positive definite")
    whitening = (evecs / np.sqrt(evals)) @ evecs.T
    unwhitening = (evecs * np.sqrt(evals)) @ evecs.T
    return TransformParams(mean, (whitening + whitening.T) / 2, (unwhitening + unwhitening.T) / 2, slope)


def fit_transform(weights: GeneratorWeights, n_samples: int, seed: int) -> TransformParams:
    """Estimate the whitening transform from ``n_samples`` mapped latents."""
    k = weights.config.k
    if n_samples < 10 * k:
        raise ValueError(f"n_samples must be >= 10*k = {10 * k}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x54]))
    z = rng.standard_normal((n_samples, k))
    u = _lrelu(mapping_forward(weights, z), weights.config.leaky_slope)
    return _whitening_from_samples(u, weights.config.leaky_slope)


def transform_forward(T: TransformParams, W) -> np.ndarray:
    """Apply ``T`` columnwise to a ``(k, L)`` matrix (or a single ``(k,)`` vector)."""
    W = np.asarray(W, dtype=np.float64)
    U = _lrelu(W, T.leaky_slope)
    if W.ndim == 1:
        return T.whitening @ (U - T.mean)
    return T.whitening @ (U - T.mean[:, None])


def transform_inverse(T: TransformParams, V) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        U = T.unwhitening @ V + T.mean
    else:
        U = T.unwhitening @ V + T.mean[:, None]
    return np.where(U >= 0, U, U / T.leaky_slope)


class LatentWhitener(TransformerMixin, BaseEstimator):
    """sklearn-style wrapper around the leaky-ReLU + whitening transform.

    ``fit`` takes intermediate latents ``w`` as rows of ``X``; ``transform``
    and ``inverse_transform`` act row-wise.
    """

    def __init__(self, leaky_slope: float = 0.2):
        self.leaky_slope = leaky_slope

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        self.params_ = _whitening_from_samples(_lrelu(X, self.leaky_slope), self.leaky_slope)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return transform_forward(self.params_, X.T).T

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return transform_inverse(self.params_, X.T).T


def sample_latent_norm_sq(weights: GeneratorWeights, T: TransformParams, n: int, seed: int,
                          batch: int = 20000) -> np.ndarray:
    """Squared norms of ``T(G_m(z))`` for ``n`` standard-normal draws of ``z``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4E]))
    out = np.empty(n)
    k = weights.config.k
    for start in range(0, n, batch):
        m = min(batch, n - start)
        w = mapping_forward(weights, rng.standard_normal((m, k)))
        v = transform_forward(T, w.T)
        out[start:start + m] = np.sum(v * v, axis=0)
    return out


# --------------------------------------------------------------------------
# synthesis network


def _check_latents(weights: GeneratorWeights, V, phi):
    cfg = weights.config
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (cfg.k, cfg.L):
        raise ValueError(f"style matrix must have shape {(cfg.k, cfg.L)}, got {V.shape}")
    if len(phi) != cfg.L:
        raise ValueError(f"expected {cfg.L} noise vectors, got {len(phi)}")
    phi = [np.asarray(p, dtype=np.float64) for p in phi]
    for l, (p, d) in enumerate(zip(phi, cfg.noise_dims)):
        if p.shape != (d,):
            raise ValueError(f"noise vector {l} must have length {d}, got shape {p.shape}")
    return V, phi


_TAPS = [(di, dj) for di in range(3) for dj in range(3)]


# Feature maps are kept channels-last, flattened to (H*W, C).


def _im2col(x: np.ndarray, r: int) -> np.ndarray:
    C = x.shape[1]
    xp = np.zeros((r + 2, r + 2, C))
    xp[1:-1, 1:-1] = x.reshape(r, r, C)
    cols = np.concatenate([xp[di:di + r, dj:dj + r] for di, dj in _TAPS], axis=2)
    return cols.reshape(r * r, 9 * C)


def _col2im(gcols: np.ndarray, r: int) -> np.ndarray:
    C = gcols.shape[1] // 9
    g = gcols.reshape(r, r, 9, C)
    gp = np.zeros((r + 2, r + 2, C))
    for t, (di, dj) in enumerate(_TAPS):
        gp[di:di + r, dj:dj + r] += g[:, :, t]
    return gp[1:-1, 1:-1].reshape(r * r, C)


def _upsample(x: np.ndarray, r: int) -> np.ndarray:
    C = x.shape[1]
    return x.reshape(r, r, C).repeat(2, axis=0).repeat(2, axis=1).reshape(4 * r * r, C)


def _downsample_sum(g: np.ndarray, r: int) -> np.ndarray:
    # adjoint of _upsample; r is the coarse side
    C = g.shape[1]
    return g.reshape(r, 2, r, 2, C).sum(axis=(1, 3)).reshape(r * r, C)


def _forward(weights: GeneratorWeights, T: TransformParams, V, phi, keep: bool):
    cfg = weights.config
    C, slope = cfg.channels, cfg.leaky_slope
    Wlat = transform_inverse(T, V)  # (k, L)
    styles = np.einsum("lck,kl->lc", weights.style_w, Wlat) + weights.style_b
    cache = []
    x = weights._const_hwc
    for i in range(cfg.L):
        r = cfg.layer_resolution(i)
        if i > 0 and i % 2 == 0:
            x = _upsample(x, r // 2)
        cols = _im2col(x, r)
        b = cols @ weights._conv_mats[i]
        b += weights.conv_b[i]
        b += weights.noise_scale[i] * phi[i][:, None]
        c = np.maximum(b, slope * b)
        c -= c.mean(axis=0)
        inv_std = 1.0 / np.sqrt(np.mean(c * c, axis=0) + _IN_EPS)
        xhat = c * inv_std
        ys, yb = styles[i, :C], styles[i, C:]
        x = xhat * (1.0 + ys) + yb
        if keep:
            cache.append((cols, b, xhat, inv_std))
    logits = x @ weights.head_w + weights.head_b[0]
    sig = expit(logits)
    img = _OUT_MARGIN + (1.0 - 2.0 * _OUT_MARGIN) * sig
    res = cfg.output_resolution
    return img.reshape(res, res), (styles, cache, sig)


def _backward(weights: GeneratorWeights, T: TransformParams, V, state, upstream):
    cfg = weights.config
    C, slope = cfg.channels, cfg.leaky_slope
    styles, cache, sig = state
    g_logit = np.asarray(upstream, dtype=np.float64).ravel()
    g_logit = g_logit * ((1.0 - 2.0 * _OUT_MARGIN) * sig * (1.0 - sig))
    gx = np.outer(g_logit, weights.head_w)
    gstyles = np.empty((cfg.L, 2 * C))
    gphi = [None] * cfg.L
    for i in range(cfg.L - 1, -1, -1):
        cols, b, xhat, inv_std = cache[i]
        r = cfg.layer_resolution(i)
        gstyles[i, :C] = np.sum(gx * xhat, axis=0)
        gstyles[i, C:] = np.sum(gx, axis=0)
        gxhat = gx * (1.0 + styles[i, :C])
        gc = gxhat - gxhat.mean(axis=0)
        gc -= xhat * np.mean(gxhat * xhat, axis=0)
        gc *= inv_std
        gb = np.where(b >= 0, gc, slope * gc)
        gphi[i] = weights.noise_scale[i] * gb.sum(axis=1)
        if i == 0:
            break
        gx = _col2im(gb @ weights._conv_mats[i].T, r)
        if i % 2 == 0:
            gx = _downsample_sum(gx, r // 2)
    gW = np.einsum("lck,lc->kl", weights.style_w, gstyles)
    # through T^{-1}: w = lrelu^{-1}(S v + mean)
    U = T.unwhitening @ np.asarray(V, dtype=np.float64) + T.mean[:, None]
    gU = np.where(U >= 0, gW, gW / T.leaky_slope)
    gV = T.unwhitening.T @ gU
    return gV, gphi


def synthesize(weights: GeneratorWeights, T: TransformParams, V, phi) -> np.ndarray:
    """Generate an image in ``(0, 1)`` as a ``(res, res)`` array."""
    V, phi = _check_latents(weights, V, phi)
    img, _ = _forward(weights, T, V, phi, keep=False)
    return img


def generator_grad(weights: GeneratorWeights, T: TransformParams, V, phi, upstream):
    """Vector-Jacobian product of :func:`synthesize` with respect to ``(V, phi)``."""
    V, phi = _check_latents(weights, V, phi)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.size != weights.config.n_pixels:
        raise ValueError(f"upstream must have {weights.config.n_pixels} entries")
    _, state = _forward(weights, T, V, phi, keep=True)
    return _backward(weights, T, V, state, upstream)


def synthesize_with_grad(weights, T, V, phi, loss_grad):
    """Forward pass plus a VJP whose upstream is ``loss_grad(image)``.

    ``loss_grad`` returns ``(value, d value / d image)``; the result is
    ``(image, value, gradV, gradPhi)``. One forward pass is shared.
    """
    V, phi = _check_latents(weights, V, phi)
    img, state = _forward(weights, T, V, phi, keep=True)
    value, upstream = loss_grad(img)
    gV, gphi = _backward(weights, T, V, state, upstream)
    return img, value, gV, gphi


# --------------------------------------------------------------------------
# weights file


class WeightsFormatError(ValueError):
    pass


_MAGIC = b"LMGW"
_VERSION = 1


def save_weights(weights: GeneratorWeights, path) -> None:
    """Write ``LMGW`` v1: magic, u16 version, config block, length-prefixed
    float32 arrays in ``PARAM_NAMES`` order, trailing CRC32 (all little-endian)."""
    cfg = weights.config
    buf = bytearray(_MAGIC)
    buf += struct.pack("<H", _VERSION)
    buf += struct.pack("<IIIId", cfg.k, cfg.L, cfg.channels, cfg.mapping_depth, cfg.leaky_slope)
    for name in GeneratorWeights.PARAM_NAMES:
        arr = getattr(weights, name).astype("<f4")
        buf += struct.pack("<Q", arr.size)
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def load_weights(path) -> GeneratorWeights:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise WeightsFormatError("not a generator weights file (bad magic)")
    if len(data) < 4 + 2 + 24 + 4:
        raise WeightsFormatError("weights file truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightsFormatError("weights file checksum mismatch")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != _VERSION:
        raise WeightsFormatError(f"unsupported weights format version {version}")
    k, L, C, D, slope = struct.unpack_from("<IIIId", body, 6)
    cfg = GeneratorConfig(k=k, L=L, channels=C, mapping_depth=D, leaky_slope=slope)
    shapes = {
        "mapping_w": (D, k, k), "mapping_b": (D, k), "const": (C, 4, 4),
        "style_w": (L, 2 * C, k), "style_b": (L, 2 * C),
        "conv_w": (L, C, C, 3, 3), "conv_b": (L, C), "noise_scale": (L,),
        "head_w": (C,), "head_b": (1,),
    }
    off = 6 + 24
    arrays = {}
    for name in GeneratorWeights.PARAM_NAMES:
        (size,) = struct.unpack_from("<Q", body, off)
        off += 8
        if size != int(np.prod(shapes[name])):
            raise WeightsFormatError(f"{name}: size {size} inconsistent with config")
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off)
        off += 4 * size
        arrays[name] = arr.astype(np.float64).reshape(shapes[name])
    if off != len(body):
        raise WeightsFormatError("trailing bytes in weights file")
    return GeneratorWeights(cfg, **arrays)


def weights_file_hash(path) -> str:
    """Git-style blob hash (sha1 over ``blob <len>\\0`` + content)."""
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()
