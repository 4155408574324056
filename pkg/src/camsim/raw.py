"""Raw image representation, Bayer packing and full-reference metrics.

A raw frame is held as a half-resolution four-plane array with channels in
the canonical order (R, Gr, Gb, B) regardless of the sensor's CFA layout;
``cfa_order`` only decides where each plane lives inside the mosaic.
Metrics are computed in normalized raw space, not on rendered sRGB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DimensionError, ParameterError

CFA_ORDERS = ("RGGB", "BGGR", "GRBG", "GBRG")
CHANNELS = ("R", "Gr", "Gb", "B")
PSNR_CAP = 100.0
OVEREXPOSURE_THRESHOLD = 0.99

_RASTER = ((0, 0), (0, 1), (1, 0), (1, 1))


def cfa_offsets(cfa_order: str) -> list[tuple[int, int]]:
    """Mosaic offsets ``(di, dj)`` of the R, Gr, Gb and B planes."""
    if cfa_order not in CFA_ORDERS:
        raise ParameterError(f"unknown CFA order {cfa_order!r}")
    red = _RASTER[cfa_order.index("R")]
    blue = _RASTER[cfa_order.index("B")]
    greens = [_RASTER[i] for i, c in enumerate(cfa_order) if c == "G"]
    # Gr shares a row with red.
    gr, gb = greens if greens[0][0] == red[0] else greens[::-1]
    return [red, gr, gb, blue]


@dataclass(frozen=True)
class NoiseLevelFunction:
    """Affine signal-to-variance map ``var(x) = read + shot * x``."""

    read: float = 0.0
    shot: float = 0.0

    def __post_init__(self):
        if not (self.read >= 0 and self.shot >= 0):
            raise ParameterError(
                f"NLF parameters must be non-negative, got ({self.read}, {self.shot})")

    def variance(self, x):
        return self.read + self.shot * np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class ExposureSettings:
    """Exposure time ``t`` (s), ISO gain ``g``, f-number ``n`` and the NLF at ``g``.

    ``t`` and ``g`` may be any positive real, including the exact
    :class:`~camsim.exposure.ExposureScale` values produced by bracket planning.
    """

    t: Any
    g: Any
    n: float
    nlf: NoiseLevelFunction = field(default_factory=NoiseLevelFunction)

    def __post_init__(self):
        for name in ("t", "g", "n"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"setting {name} must be positive, got {value}")

    @property
    def iso(self) -> float:
        return float(self.g)

    def key(self) -> tuple[float, float, float]:
        return (float(self.t), float(self.g), float(self.n))


@dataclass(frozen=True, eq=False)
class RawImage:
    """Normalized half-resolution raw frame of shape ``(H/2, W/2, 4)``."""

    data: np.ndarray
    cfa_order: str = "RGGB"
    black_level: int = 0
    white_level: int = 16383
    settings: Optional[ExposureSettings] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 3 or data.shape[2] != 4:
            raise DimensionError(f"raw data must have shape (h, w, 4), got {data.shape}")
        if self.white_level <= self.black_level:
            raise ParameterError("white_level must exceed black_level")
        if self.cfa_order not in CFA_ORDERS:
            raise ParameterError(f"unknown CFA order {self.cfa_order!r}")
        if data.size and not (data.min() >= 0.0 and data.max() <= 1.0):
            raise ParameterError("raw data must be normalized to [0, 1]")

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data, settings=None) -> "RawImage":
        """Copy with new pixel data, clipped to [0, 1]."""
        data = np.clip(data, 0.0, 1.0)
        return replace(self, data=data,
                       settings=self.settings if settings is None else settings)


def unpack_bayer(mosaic, black_level: int, white_level: int,
                 cfa_order: str = "RGGB", settings=None) -> RawImage:
    mosaic = np.asarray(mosaic)
    if mosaic.ndim != 2:
        raise DimensionError("mosaic must be two-dimensional")
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise DimensionError(f"mosaic dimensions must be even, got {h}x{w}")
    if white_level <= black_level:
        raise ParameterError("white_level must exceed black_level")
    scale = float(white_level - black_level)
    m = mosaic.astype(np.float64)
    planes = [m[di::2, dj::2] for di, dj in cfa_offsets(cfa_order)]
    data = np.clip((np.stack(planes, axis=-1) - black_level) / scale, 0.0, 1.0)
    return RawImage(data, cfa_order, int(black_level), int(white_level), settings)


def pack_bayer(raw: RawImage) -> np.ndarray:
    """Inverse of :func:`unpack_bayer`, rounded to integer DN (uint16 when it fits)."""
    h, w, _ = raw.data.shape
    dn = np.rint(raw.data * (raw.white_level - raw.black_level) + raw.black_level)
    dn = np.clip(dn, raw.black_level, raw.white_level)
    dtype = np.uint16 if raw.white_level <= np.iinfo(np.uint16).max else np.int64
    mosaic = np.empty((2 * h, 2 * w), dtype=dtype)
    for c, (di, dj) in enumerate(cfa_offsets(raw.cfa_order)):
        mosaic[di::2, dj::2] = dn[..., c]
    return mosaic


def overexposure_mask(raw, threshold: float = OVEREXPOSURE_THRESHOLD) -> np.ndarray:
    """True where a pixel exceeds ``threshold`` and must be left out of fits."""
    if not 0.0 < threshold <= 1.0:
        raise ParameterError("threshold must lie in (0, 1]")
    return _as_array(raw) > threshold


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, RawImage) else np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def compute_psnr(a, b) -> float:
    """PSNR in dB with peak 1.0, capped at 100 dB."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def compute_ssim(a, b, window: int = 7, k1: float = 0.01, k2: float = 0.03,
                 data_range: float = 1.0) -> float:
    """Mean SSIM over all channels with a uniform ``window`` x ``window`` box.

    Only windows lying fully inside the image contribute; statistics use the
    population (1/N) normalization.
    """
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise DimensionError(f"image {a.shape[:2]} is smaller than the {window}x{window} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    pad = window // 2
    crop = (slice(pad, a.shape[0] - pad), slice(pad, a.shape[1] - pad))
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]

        def mean(z):
            return uniform_filter(z, size=window, mode="reflect")[crop]

        mx, my = mean(x), mean(y)
        vx = mean(x * x) - mx * mx
        vy = mean(y * y) - my * my
        cxy = mean(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))
