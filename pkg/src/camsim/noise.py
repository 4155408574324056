"""Noise stage: NLF propagation, noise-level maps, noise synthesis and denoising."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .nn import EncoderDecoder
from .raw import NoiseLevelFunction, RawImage
from .training import TrainSchedule, train_residual

LOW_ISO_TARGETS = (100, 200, 400)


def propagate_nlf(nlf: NoiseLevelFunction, alpha_hat, mode: str = "physical") -> NoiseLevelFunction:
    """NLF of an image scaled by ``alpha_hat``, as a function of the scaled signal.

    ``physical``: the variance of ``a * y`` is ``a**2 * var(y)``; against the
    scaled signal ``a * x`` that gives ``(a**2 * read, a * shot)``.
    ``literal``: the shot term keeps the published ``a * shot * x`` written
    against the unscaled signal, i.e. ``(a**2 * read, shot)`` against ``a * x``.
    """
    a = float(alpha_hat)
    if not a > 0:
        raise ParameterError(f"alpha_hat must be positive, got {a}")
    if mode == "physical":
        return NoiseLevelFunction(a * a * nlf.read, a * nlf.shot)
    if mode == "literal":
        return NoiseLevelFunction(a * a * nlf.read, nlf.shot)
    raise ParameterError(f"unknown NLF propagation mode {mode!r}")


@dataclass(frozen=True, eq=False)
class NoiseLevelMap:
    """Per-pixel noise standard deviation, same shape as the image planes."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if not (np.all(np.isfinite(sigma)) and np.all(sigma >= 0)):
            raise ParameterError("noise level map must be finite and non-negative")
        object.__setattr__(self, "sigma", sigma)


def noise_level_map(image, nlf: NoiseLevelFunction) -> NoiseLevelMap:
    x = image.data if isinstance(image, RawImage) else np.asarray(image, dtype=np.float64)
    return NoiseLevelMap(np.sqrt(np.maximum(nlf.read + nlf.shot * x, 0.0)))


def synthesize_noise(clean, nlf: NoiseLevelFunction, seed=0):
    """Add clipped heteroscedastic Gaussian noise with variance ``nlf(clean)``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = clean.data if isinstance(clean, RawImage) else np.asarray(clean, dtype=np.float64)
    std = np.sqrt(np.maximum(nlf.read + nlf.shot * x, 0.0))
    noisy = np.clip(x + std * rng.standard_normal(x.shape), 0.0, 1.0)
    return clean.with_data(noisy) if isinstance(clean, RawImage) else noisy


def _pad_to_multiple(x, multiple):
    h, w = x.shape[1:3]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if (h > ph and w > pw) else "edge"
        x = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)), mode=mode)
    return x, (h, w)


class ResidualNet:
    """Encoder-decoder predicting a 4-channel residual; zero at initialization."""

    in_channels = 4

    def __init__(self, base_width=16, depth=3, seed=0, gate_factory=None):
        self.body = EncoderDecoder(self.in_channels, 4, base_width, depth, gate_factory, seed)

    @property
    def config(self) -> dict:
        return {"base_width": self.body.base_width, "depth": self.body.depth}

    def parameters(self):
        return self.body.parameters()

    def forward(self, x, cond=None):
        return self.body.forward(x, cond)

    def backward(self, dy):
        return self.body.backward(dy)

    def predict(self, x, cond=None):
        """Residual for a single (H, W, C) input of any size."""
        batch, (h, w) = _pad_to_multiple(x[None], 2 ** (self.body.depth - 1))
        cond = None if cond is None else np.asarray(cond, dtype=np.float64)[None]
        return self.forward(batch, cond)[0, :h, :w]


class DenoiserNet(ResidualNet):
    """Takes the exposure-stage image and its noise-level map (8 channels)."""

    in_channels = 8


def denoiser_input(image, nlm: NoiseLevelMap) -> np.ndarray:
    x = image.data if isinstance(image, RawImage) else np.asarray(image, dtype=np.float64)
    if nlm.sigma.shape != x.shape:
        raise DimensionError(f"noise map {nlm.sigma.shape} does not match image {x.shape}")
    return np.concatenate([x, nlm.sigma], axis=-1)


def denoise(image: RawImage, nlm: NoiseLevelMap, net: DenoiserNet) -> RawImage:
    """``clip(image + net(image, map))``."""
    residual = net.predict(denoiser_input(image, nlm))
    return image.with_data(image.data + residual)


def check_noise_target(target: RawImage):
    iso = None if target.settings is None else float(target.settings.g)
    if iso not in LOW_ISO_TARGETS:
        raise ParameterError(f"noise-stage target ISO {iso} not in {LOW_ISO_TARGETS}")


def train_denoiser(pairs, net: DenoiserNet, schedule: TrainSchedule | None = None,
                   epochs: int | None = None, rng=None) -> tuple[DenoiserNet, list[float]]:
    """Train on ``(I_exp, noise_map, target)`` triples; returns ``(net, loss_curve)``.

    Every target must be captured at ISO 100, 200 or 400.
    """
    schedule = schedule or TrainSchedule()
    pairs = list(pairs)
    examples = []
    for image, nlm, target in pairs:
        check_noise_target(target)
        examples.append((denoiser_input(image, nlm), image.data, target.data, None))
    epochs = schedule.noise_epochs if epochs is None else epochs
    curve = train_residual(net, examples, epochs, schedule, rng, label="noise")
    return net, curve
