"""Exposure stage: physical luminance multiplier plus a linear refinement.

The multiplier between two settings is the product of the exposure-time
ratio, the ISO ratio and an aperture term evaluated on integer third-stops.
It is returned as an :class:`ExposureScale`, an exact number of the form
``q * 2**(k/6)`` with rational ``q``, so that identities such as
``alpha(A, B) * alpha(B, A) == 1`` hold exactly rather than to rounding.
"""

from __future__ import annotations

import logging
import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DegenerateDataError, ParameterError
from .raw import OVEREXPOSURE_THRESHOLD, ExposureSettings, RawImage, overexposure_mask

log = logging.getLogger(__name__)


class ExposureScale(numbers.Real):
    """Exact positive real ``rational * 2**(sixths / 6)``.

    Sixth-stops cover both the third-stop aperture grid and half-stop EV
    brackets. The representation is normalized so that ``0 <= sixths < 6``,
    which makes equality exact and unique.
    """

    __slots__ = ("rational", "sixths")

    def __init__(self, rational=1, sixths: int = 0):
        q = rational if type(rational) is Fraction else _to_fraction(rational)
        whole, rest = divmod(int(sixths), 6)
        if whole > 0:
            q = q * (1 << whole)
        elif whole < 0:
            q = q / (1 << -whole)
        self.rational = q
        self.sixths = rest

    @classmethod
    def pow2(cls, exponent) -> "ExposureScale":
        """``2**exponent`` for exponents on the sixth-stop grid."""
        k = Fraction(exponent) * 6
        if k.denominator != 1:
            raise ParameterError(f"exponent {exponent} is not a multiple of 1/6")
        return cls(1, int(k))

    @classmethod
    def of(cls, value) -> "ExposureScale":
        if isinstance(value, ExposureScale):
            return value
        return cls(value, 0)

    @property
    def stops(self) -> float:
        """log2 of the value."""
        return math.log2(self.rational) + self.sixths / 6

    def __float__(self):
        return float(self.rational) * 2.0 ** (self.sixths / 6)

    def __repr__(self):
        if self.sixths == 0:
            return f"ExposureScale({self.rational})"
        return f"ExposureScale({self.rational} * 2**({self.sixths}/6))"

    def __hash__(self):
        return hash(self.rational) if self.sixths == 0 else hash((self.rational, self.sixths))

    def __eq__(self, other):
        if isinstance(other, (ExposureScale, numbers.Rational, float)):
            if isinstance(other, float) and not math.isfinite(other):
                return False
            other = ExposureScale.of(other)
            return self.rational == other.rational and self.sixths == other.sixths
        return NotImplemented

    def __mul__(self, other):
        if not isinstance(other, (ExposureScale, numbers.Rational, float)):
            return NotImplemented
        other = ExposureScale.of(other)
        return ExposureScale(self.rational * other.rational, self.sixths + other.sixths)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (ExposureScale, numbers.Rational, float)):
            return NotImplemented
        return self * ExposureScale.of(other).inverse()

    def __rtruediv__(self, other):
        if not isinstance(other, (ExposureScale, numbers.Rational, float)):
            return NotImplemented
        return ExposureScale.of(other) * self.inverse()

    def inverse(self) -> "ExposureScale":
        return ExposureScale(1 / self.rational, -self.sixths)

    # The remaining numbers.Real surface falls back to float arithmetic.
    def __add__(self, other): return float(self) + float(other)
    def __radd__(self, other): return float(other) + float(self)
    def __neg__(self): return -float(self)
    def __pos__(self): return self
    def __abs__(self): return self
    def __pow__(self, other): return float(self) ** float(other)
    def __rpow__(self, other): return float(other) ** float(self)
    def __lt__(self, other): return float(self) < float(other)
    def __le__(self, other): return float(self) <= float(other)
    def __trunc__(self): return math.trunc(float(self))
    def __floor__(self): return math.floor(float(self))
    def __ceil__(self): return math.ceil(float(self))
    def __round__(self, ndigits=None): return round(float(self), ndigits)
    def __floordiv__(self, other): return float(self) // float(other)
    def __rfloordiv__(self, other): return float(other) // float(self)
    def __mod__(self, other): return float(self) % float(other)
    def __rmod__(self, other): return float(other) % float(self)


def _to_fraction(value) -> Fraction:
    if isinstance(value, ExposureScale):
        if value.sixths:
            raise ParameterError("irrational scale has no rational form")
        return value.rational
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ParameterError(f"non-finite value {value}")
        return Fraction(float(value))
    return Fraction(value)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def fnumber_to_stop(n) -> int:
    """Integer third-stop index ``round(6 * log2(n))`` of an f-number."""
    n = float(n)
    if not n > 0:
        raise ParameterError(f"f-number must be positive, got {n}")
    return round_half_away(6.0 * math.log2(n))


def compute_alpha(s_in: ExposureSettings, s_out: ExposureSettings) -> ExposureScale:
    """Luminance multiplier taking ``s_in`` to ``s_out``."""
    out, inp = ExposureScale.of(s_out.t) * s_out.g, ExposureScale.of(s_in.t) * s_in.g
    # 2**((s1 - s2) / 3) == 2**(2 * (s1 - s2) / 6)
    sixths = out.sixths - inp.sixths + 2 * (fnumber_to_stop(s_in.n) - fnumber_to_stop(s_out.n))
    return ExposureScale(out.rational / inp.rational, sixths)


@dataclass
class ExposureCorrection:
    """Learned refinement: effective gain ``w * alpha`` and black-level offset ``b``."""

    w: float = 1.0
    b: float = 0.0
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not self.w > 0:
            raise ParameterError(f"w must be positive, got {self.w}")
        if not abs(self.b) < 0.1:
            raise ParameterError(f"|b| must stay below 0.1, got {self.b}")


def apply_exposure(raw: RawImage, alpha, corr: ExposureCorrection | None = None,
                   settings: ExposureSettings | None = None) -> RawImage:
    """``clip((raw + b) * w * alpha)``; ``settings`` become the output's settings."""
    alpha = float(alpha)
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    corr = corr or ExposureCorrection()
    out = (raw.data + corr.b) * (corr.w * alpha)
    return raw.with_data(out, settings)


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, cw = values[order], np.cumsum(weights[order])
    idx = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(v[min(idx, v.size - 1)])


def _fit_arrays(pairs, threshold):
    xs, ys, alphas = [], [], []
    for src, dst, alpha in pairs:
        x, y = np.asarray(getattr(src, "data", src)), np.asarray(getattr(dst, "data", dst))
        keep = ~(overexposure_mask(x, threshold) | overexposure_mask(y, threshold))
        xs.append(x[keep])
        ys.append(y[keep])
        alphas.append(np.full(int(keep.sum()), float(alpha)))
    x, y, a = (np.concatenate(v) if v else np.empty(0) for v in (xs, ys, alphas))
    # Target pixels clipped at zero carry no information about the gain either.
    keep = y > 0
    return x[keep], y[keep], a[keep]


def fit_exposure_correction(pairs, threshold: float = OVEREXPOSURE_THRESHOLD,
                            w_bounds=(0.5, 2.0), tol: float = 1e-10,
                            max_iter: int = 200) -> ExposureCorrection:
    """Least-absolute-deviation fit of ``(w, b)`` over ``(source, target, alpha)`` pairs.

    For fixed ``w`` the optimal ``b`` is a weighted median, and the profiled
    objective is convex in ``w``, so a golden-section search over ``w``
    converges to the global L1 optimum. The search starts from ``w = 1,
    b = 0``; the best objective seen is recorded per iteration in
    ``history`` and never increases.
    """
    x, y, a = _fit_arrays(list(pairs), threshold)
    if x.size == 0:
        raise DegenerateDataError("every pixel is over-exposed or unusable; nothing to fit")

    def best_b(w):
        scale = w * a
        return _weighted_median(y / scale - x, scale)

    def objective(w, b):
        return float(np.mean(np.abs((x + b) * w * a - y)))

    def profile(w):
        b = float(np.clip(best_b(w), -0.0999, 0.0999))
        return objective(w, b), b

    best_w, best_bv = 1.0, 0.0
    best_f = objective(1.0, 0.0)
    history = [best_f]

    def consider(w, fb):
        nonlocal best_w, best_bv, best_f
        f, b = fb
        if f < best_f:
            best_w, best_bv, best_f = w, b, f
        history.append(best_f)
        return f

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = w_bounds
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = consider(c, profile(c)), consider(d, profile(d))
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = consider(c, profile(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = consider(d, profile(d))
    log.debug("exposure fit: w=%.8f b=%.8f L1=%.3e after %d evaluations",
              best_w, best_bv, best_f, len(history))
    return ExposureCorrection(best_w, best_bv, history)
