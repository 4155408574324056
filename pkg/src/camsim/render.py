"""Preview rendering, HDR bracketing and fusion, and auto-exposure search."""

from __future__ import annotations

import logging
import math
import warnings
import zlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.ndimage import convolve, laplace

from .dataset import FNUMBER_RANGE, ISO_RANGE, TIME_RANGE, make_settings, synthetic_nlf
from .errors import DimensionError, NumericError, ParameterError
from .exposure import ExposureScale
from .raw import OVEREXPOSURE_THRESHOLD, ExposureSettings, RawImage

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------- preview ISP


@dataclass(frozen=True)
class RenderParams:
    """White-balance gains, a 3x3 camera-to-sRGB matrix and the tone curve.

    ``gamma=None`` selects the piecewise sRGB curve; a number applies
    ``x ** (1 / gamma)``.
    """

    wb: tuple = (2.0, 1.0, 1.6)
    matrix: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    gamma: float | None = None

    def __post_init__(self):
        wb = tuple(float(g) for g in self.wb)
        if len(wb) != 3 or not all(g > 0 and math.isfinite(g) for g in wb):
            raise ParameterError(f"white-balance gains must be three positive numbers, got {self.wb}")
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ParameterError("color matrix must be a finite 3x3 array")
        if self.gamma is not None and not self.gamma > 0:
            raise ParameterError("gamma must be positive")
        object.__setattr__(self, "wb", wb)
        object.__setattr__(self, "matrix", tuple(map(tuple, m.tolist())))

    @classmethod
    def linear(cls) -> "RenderParams":
        return cls(wb=(1.0, 1.0, 1.0), gamma=1.0)


def srgb_curve(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(np.maximum(x, 0.0031308), 1 / 2.4) - 0.055)


def quantize8(x) -> np.ndarray:
    """Map [0, 1] to 0..255 with round-half-up (0.5 becomes 128)."""
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render_linear(raw, params: RenderParams | None = None) -> np.ndarray:
    """Float RGB in [0, 1] before quantization."""
    params = params or RenderParams()
    x = raw.data if isinstance(raw, RawImage) else np.asarray(raw, dtype=np.float64)
    rgb = np.stack([x[..., 0], 0.5 * (x[..., 1] + x[..., 2]), x[..., 3]], axis=-1)
    rgb = rgb * np.asarray(params.wb)
    rgb = np.clip(rgb @ np.asarray(params.matrix).T, 0.0, 1.0)
    rgb = srgb_curve(rgb) if params.gamma is None else rgb ** (1.0 / params.gamma)
    return np.clip(rgb, 0.0, 1.0)


def render_srgb(raw, params: RenderParams | None = None) -> np.ndarray:
    """8-bit RGB preview of shape (H/2, W/2, 3); green is the mean of both green planes."""
    return quantize8(render_linear(raw, params))


# --------------------------------------------------------------------------- HDR


MIN_ISO = ISO_RANGE[0]
EV_STEPS = tuple(Fraction(k, 2) for k in range(-8, 9))


def plan_hdr_bracket(source: ExposureSettings, evs=EV_STEPS) -> list[ExposureSettings]:
    """Targets at ``source * 2**EV`` for EV in -4..4 (half stops), at the lowest ISO.

    The aperture is kept, ISO drops to 100 and the exposure time absorbs the
    difference exactly. Targets whose time leaves the supported range are
    dropped with a warning.
    """
    out = []
    for ev in evs:
        gain_ratio = ExposureScale.of(source.g) / ExposureScale.of(MIN_ISO)
        t = ExposureScale.of(source.t) * gain_ratio * ExposureScale.pow2(ev)
        lo, hi = TIME_RANGE
        if not lo <= float(t) <= hi:
            warnings.warn(f"EV {float(ev):+g}: exposure time {float(t):.6g} s outside "
                          f"[{lo:g}, {hi:g}]; target dropped", stacklevel=2)
            continue
        t = t.rational if t.sixths == 0 else t
        out.append(ExposureSettings(t, int(MIN_ISO), source.n, synthetic_nlf(MIN_ISO)))
    return out


WELL_EXPOSED_RANGE = (0.05, 0.95)


def well_exposed_fraction(img, lo=WELL_EXPOSED_RANGE[0], hi=WELL_EXPOSED_RANGE[1]) -> float:
    """Share of pixels whose luminance lies inside [lo, hi] (8-bit input is rescaled)."""
    img = np.asarray(img)
    x = img / 255.0 if img.dtype == np.uint8 else img.astype(np.float64)
    lum = x.mean(axis=-1) if x.ndim == 3 else x
    return float(np.mean((lum >= lo) & (lum <= hi)))


@dataclass(frozen=True)
class FusionWeights:
    """Well-exposedness is Gaussian around ``mid`` with width ``sigma``.

    Contrast is the absolute Laplacian of the gray image; ``contrast_floor``
    keeps flat regions from getting zero weight.
    """

    sigma: float = 0.2
    mid: float = 0.5
    well_exposedness: float = 1.0
    contrast: float = 1.0
    contrast_floor: float = 0.05
    eps: float = 1e-12
    levels: int | None = None


def fusion_weights(frames, cfg: FusionWeights | None = None) -> np.ndarray:
    """Per-pixel weights of shape (K, H, W) that sum to 1 over the frames."""
    cfg = cfg or FusionWeights()
    ws = []
    for f in frames:
        well = np.prod(np.exp(-0.5 * ((f - cfg.mid) / cfg.sigma) ** 2), axis=-1)
        contrast = np.abs(laplace(f.mean(axis=-1), mode="nearest")) + cfg.contrast_floor
        ws.append(well ** cfg.well_exposedness * contrast ** cfg.contrast + cfg.eps)
    w = np.stack(ws)
    return w / w.sum(axis=0, keepdims=True)


_KERNEL = np.array([1, 4, 6, 4, 1], dtype=np.float64) / 16.0


def _blur(x):
    k = _KERNEL
    x = convolve(x, k[:, None, None] if x.ndim == 3 else k[:, None], mode="reflect")
    return convolve(x, k[None, :, None] if x.ndim == 3 else k[None, :], mode="reflect")


def _down(x):
    return _blur(x)[::2, ::2]


def _up(x, shape):
    up = np.zeros(shape[:2] + x.shape[2:])
    up[::2, ::2] = x
    return 4.0 * _blur(up)


def _gaussian_pyramid(x, levels):
    pyr = [x]
    for _ in range(levels - 1):
        pyr.append(_down(pyr[-1]))
    return pyr


def _laplacian_pyramid(x, levels):
    g = _gaussian_pyramid(x, levels)
    return [g[i] - _up(g[i + 1], g[i].shape) for i in range(levels - 1)] + [g[-1]]


def fuse_exposures(frames, weights: FusionWeights | None = None) -> np.ndarray:
    """Blend 8-bit RGB frames by quality weights over a Laplacian pyramid."""
    cfg = weights or FusionWeights()
    if len(frames) < 2:
        raise ParameterError("fusion needs at least two frames")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise DimensionError(f"frames differ in size: {sorted(shapes)}")
    imgs = [np.asarray(f, dtype=np.float64) / 255.0 for f in frames]
    w = fusion_weights(imgs, cfg)
    h, wd = imgs[0].shape[:2]
    levels = cfg.levels or max(1, int(math.floor(math.log2(max(min(h, wd), 1)))) - 2)
    out = None
    for img, wk in zip(imgs, w):
        lp = _laplacian_pyramid(img, levels)
        gp = _gaussian_pyramid(wk, levels)
        blended = [l * g[..., None] for l, g in zip(lp, gp)]
        out = blended if out is None else [o + b for o, b in zip(out, blended)]
    result = out[-1]
    for lev in reversed(out[:-1]):
        result = lev + _up(result, lev.shape)
    return quantize8(result)


def hdr_preview(model, raw_in: RawImage, params: RenderParams | None = None, seed=0,
                fusion: FusionWeights | None = None, simulate_fn=None):
    """Simulate the bracket, render every frame and fuse them.

    Returns ``(fused, frames, targets)``.
    """
    from .pipeline import SimulateOptions, simulate

    simulate_fn = simulate_fn or simulate
    targets = plan_hdr_bracket(raw_in.settings)
    frames = []
    for k, target in enumerate(targets):
        out = simulate_fn(model, raw_in, target, SimulateOptions(seed=seed + k))
        frames.append(render_srgb(out, params))
    return fuse_exposures(frames, fusion), frames, targets


# --------------------------------------------------------------------------- auto-exposure


@dataclass(frozen=True)
class ExposureState:
    settings: ExposureSettings
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise NumericError(f"non-finite score {self.score} for {self.settings}")


@dataclass(frozen=True)
class HeuristicScorer:
    """Lower is better: clipped share + near-black share + mean noise level.

    The noise term is the mean per-pixel standard deviation under the
    frame's noise model, scaled by ``noise_weight``.
    """

    clip_threshold: float = OVEREXPOSURE_THRESHOLD
    black_threshold: float = 0.02
    noise_weight: float = 10.0

    def __call__(self, raw: RawImage) -> float:
        x = raw.data
        clipped = float(np.mean(x >= self.clip_threshold))
        dark = float(np.mean(x <= self.black_threshold))
        noise = 0.0
        if raw.settings is not None:
            noise = float(np.mean(np.sqrt(raw.settings.nlf.variance(x))))
        return clipped + dark + self.noise_weight * noise


default_scorer = HeuristicScorer()


def exposure_grid(isos=(100, 400, 1600, 6400), times=(Fraction(1, 1000), Fraction(1, 100),
                  Fraction(1, 10), Fraction(1)), fnumbers=(4.0, 8.0, 11.0, 22.0)) -> list[ExposureSettings]:
    """4 x 4 x 4 = 64 candidate states, log-spaced inside the supported ranges."""
    for n in fnumbers:
        if not FNUMBER_RANGE[0] <= n <= FNUMBER_RANGE[1]:
            raise ParameterError(f"f-number {n} outside {FNUMBER_RANGE}")
    return [make_settings(t, iso, n) for iso in isos for t in times for n in fnumbers]


def candidate_seed(seed: int, s: ExposureSettings) -> int:
    """Noise seed tied to the candidate itself, so scores do not depend on list order."""
    return (int(seed) + zlib.crc32(repr(s.key()).encode())) % 2**32


def score_candidates(model, raw_in: RawImage, candidates, scorer=None, seed=0,
                     simulate_fn=None) -> list[ExposureState]:
    from .pipeline import SimulateOptions, simulate

    scorer = scorer or default_scorer
    simulate_fn = simulate_fn or simulate
    states = []
    for s in candidates:
        out = simulate_fn(model, raw_in, s, SimulateOptions(seed=candidate_seed(seed, s)))
        states.append(ExposureState(s, float(scorer(out))))
    return states


def auto_expose(model, raw_in: RawImage, candidates, scorer=None, seed=0, simulate_fn=None):
    """Simulate and score every candidate; returns ``(best_state, table)``.

    The best state has the smallest score, ties going to the earliest candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ParameterError("auto_expose needs at least one candidate")
    table = score_candidates(model, raw_in, candidates, scorer, seed, simulate_fn)
    best = min(range(len(table)), key=lambda i: (table[i].score, i))
    return table[best], table
