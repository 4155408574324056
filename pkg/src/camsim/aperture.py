"""Aperture stage: defocus magnification with f-number-conditioned attention.

The adaptive aperture layer is instance normalization whose scale and shift
are affine functions of the (input, output) f-number pair. Attention gates
built from it rescale each skip feature spatially and per channel.
F-numbers enter every part of the network divided by 22, the widest value
in the supported range.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError
from .nn import Activation, Conv2d, GlobalAvgPool, Parameter, Resample
from .noise import ResidualNet
from .raw import RawImage
from .training import TrainSchedule, train_residual

FNUMBER_SCALE = 22.0
NORM_EPS = 1e-5


def fnumber_condition(n1, n2) -> np.ndarray:
    return np.array([float(n1) / FNUMBER_SCALE, float(n2) / FNUMBER_SCALE])


def _batch_cond(cond, n):
    cond = np.asarray(cond, dtype=np.float64)
    return np.broadcast_to(cond, (n, 2)) if cond.ndim == 1 else cond


class AdaptiveApertureLayer:
    """``(cond @ w_sigma + b_sigma) * instnorm(x) + (cond @ w_mu + b_mu)``.

    Initialized to plain instance normalization (unit scale, zero shift).
    """

    def __init__(self, channels: int, name: str = "aperture", eps: float = NORM_EPS):
        self.w_sigma = Parameter(np.zeros((2, channels)), f"{name}.w_sigma")
        self.b_sigma = Parameter(np.ones(channels), f"{name}.b_sigma")
        self.w_mu = Parameter(np.zeros((2, channels)), f"{name}.w_mu")
        self.b_mu = Parameter(np.zeros(channels), f"{name}.b_mu")
        self.eps = eps

    def parameters(self):
        return [self.w_sigma, self.b_sigma, self.w_mu, self.b_mu]

    def forward(self, x, cond):
        if cond is None:
            raise ParameterError("adaptive aperture layer needs f-number conditioning")
        cond = _batch_cond(cond, x.shape[0])
        mu = x.mean(axis=(1, 2), keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=(1, 2), keepdims=True) + self.eps)
        xhat = xc * inv
        gamma = (cond @ self.w_sigma.value + self.b_sigma.value)[:, None, None, :]
        beta = (cond @ self.w_mu.value + self.b_mu.value)[:, None, None, :]
        self._cache = (cond, xhat, inv, gamma)
        return gamma * xhat + beta

    def backward(self, dy):
        cond, xhat, inv, gamma = self._cache
        dgamma = (dy * xhat).sum(axis=(1, 2))
        dbeta = dy.sum(axis=(1, 2))
        self.w_sigma.accumulate(cond.T @ dgamma)
        self.b_sigma.accumulate(dgamma.sum(axis=0))
        self.w_mu.accumulate(cond.T @ dbeta)
        self.b_mu.accumulate(dbeta.sum(axis=0))
        dxhat = dy * gamma
        return inv * (dxhat - dxhat.mean(axis=(1, 2), keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=(1, 2), keepdims=True))


def adaptive_aperture_layer(x, n1, n2, layer: AdaptiveApertureLayer):
    return layer.forward(x, fnumber_condition(n1, n2))


class _Transform:
    """1x1 convolution followed by an adaptive aperture layer."""

    def __init__(self, cin, cout, rng, name):
        # bias is redundant ahead of the per-instance mean subtraction
        self.conv = Conv2d(cin, cout, 1, rng=rng, bias=False, name=f"{name}.conv")
        self.norm = AdaptiveApertureLayer(cout, f"{name}.norm")

    def parameters(self):
        return self.conv.parameters() + self.norm.parameters()

    def forward(self, x, cond):
        return self.norm.forward(self.conv.forward(x), cond)

    def backward(self, dy):
        return self.conv.backward(self.norm.backward(dy))


class _Merge:
    """relu(T_l(F_l) + T_r(F_r)), the shared front of both attention branches."""

    def __init__(self, c_l, c_r, rng, name):
        self.left = _Transform(c_l, c_l, rng, f"{name}.left")
        self.right = _Transform(c_r, c_l, rng, f"{name}.right")
        self.relu = Activation("relu")

    def parameters(self):
        return self.left.parameters() + self.right.parameters()

    def forward(self, f_l, f_r, cond):
        return self.relu.forward(self.left.forward(f_l, cond) + self.right.forward(f_r, cond))

    def backward(self, dy):
        d = self.relu.backward(dy)
        return self.left.backward(d), self.right.backward(d)


class AttentionGate:
    """Spatial and channel attention on a skip feature ``F_l`` gated by ``F_r``."""

    def __init__(self, c_l, c_r, rng=None, name="gate", reduction=4):
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = max(c_l // reduction, 1)
        self.resample = Resample("bilinear")
        self.spatial_merge = _Merge(c_l, c_r, rng, f"{name}.spatial")
        self.spatial_out = _Transform(c_l, 1, rng, f"{name}.spatial.out")
        self.spatial_sigmoid = Activation("sigmoid")
        self.channel_merge = _Merge(c_l, c_r, rng, f"{name}.channel")
        self.pool = GlobalAvgPool()
        self.excite1 = Conv2d(c_l, hidden, 1, rng=rng, name=f"{name}.channel.excite1")
        self.excite_relu = Activation("relu")
        self.excite2 = Conv2d(hidden, c_l, 1, rng=rng, name=f"{name}.channel.excite2")
        self.channel_sigmoid = Activation("sigmoid")

    def parameters(self):
        return (self.spatial_merge.parameters() + self.spatial_out.parameters()
                + self.channel_merge.parameters() + self.excite1.parameters()
                + self.excite2.parameters())

    def align(self, f_l, f_r):
        aligned = self.resample.forward(f_r, f_l.shape[1:3])
        if aligned.shape[:3] != f_l.shape[:3]:
            raise DimensionError(f"gating signal {aligned.shape} does not align with {f_l.shape}")
        return aligned

    def spatial(self, f_l, f_r_aligned, cond):
        """Attention map of shape (N, H_l, W_l, 1) in (0, 1)."""
        m = self.spatial_merge.forward(f_l, f_r_aligned, cond)
        return self.spatial_sigmoid.forward(self.spatial_out.forward(m, cond))

    def spatial_backward(self, d_beta):
        d = self.spatial_out.backward(self.spatial_sigmoid.backward(d_beta))
        return self.spatial_merge.backward(d)

    def channel(self, f_l, f_r_aligned, cond):
        """Attention vector of shape (N, 1, 1, C_l) in (0, 1)."""
        v = self.pool.forward(self.channel_merge.forward(f_l, f_r_aligned, cond))
        z = self.excite2.forward(self.excite_relu.forward(self.excite1.forward(v)))
        return self.channel_sigmoid.forward(z)

    def channel_backward(self, d_beta):
        d = self.excite2.backward(self.channel_sigmoid.backward(d_beta))
        d = self.excite1.backward(self.excite_relu.backward(d))
        return self.channel_merge.backward(self.pool.backward(d))

    def forward(self, f_l, f_r, cond):
        f_r_aligned = self.align(f_l, f_r)
        beta_s = self.spatial(f_l, f_r_aligned, cond)
        beta_c = self.channel(f_l, f_r_aligned, cond)
        self._cache = (f_l, beta_s, beta_c)
        return apply_attention(f_l, beta_s, beta_c)

    def backward(self, dy):
        f_l, beta_s, beta_c = self._cache
        d_fl = dy * beta_s * beta_c
        d_bs = (dy * f_l * beta_c).sum(axis=3, keepdims=True)
        d_bc = (dy * f_l * beta_s).sum(axis=(1, 2), keepdims=True)
        dl_s, dr_s = self.spatial_backward(d_bs)
        dl_c, dr_c = self.channel_backward(d_bc)
        d_fr = self.resample.backward(dr_s + dr_c)
        return d_fl + dl_s + dl_c, d_fr


def spatial_attention(f_l, f_r, n1, n2, gate: AttentionGate):
    cond = fnumber_condition(n1, n2)
    return gate.spatial(f_l, gate.align(f_l, f_r), cond)


def channel_attention(f_l, f_r, n1, n2, gate: AttentionGate):
    cond = fnumber_condition(n1, n2)
    return gate.channel(f_l, gate.align(f_l, f_r), cond)


def apply_attention(f_l, beta_s, beta_c):
    """``F_l * beta_s * beta_c`` with the spatial map broadcast over channels."""
    n, h, w, c = f_l.shape
    if beta_s.shape != (n, h, w, 1) or beta_c.shape != (n, 1, 1, c):
        raise DimensionError(
            f"attention maps {beta_s.shape}, {beta_c.shape} do not fit features {f_l.shape}")
    return f_l * beta_s * beta_c


class ApertureNet(ResidualNet):
    """Input: image planes plus constant n1/22 and n2/22 planes (6 channels)."""

    in_channels = 6

    def __init__(self, base_width=16, depth=3, seed=0):
        super().__init__(base_width, depth, seed, gate_factory=AttentionGate)


def aperture_input(image, n1, n2) -> np.ndarray:
    x = image.data if isinstance(image, RawImage) else np.asarray(image, dtype=np.float64)
    cond = fnumber_condition(n1, n2)
    planes = np.broadcast_to(cond, x.shape[:2] + (2,))
    return np.concatenate([x, planes], axis=-1)


def aperture_forward(image: RawImage, n1, n2, net: ApertureNet) -> RawImage:
    """``clip(image + net(image, n1, n2))``."""
    if not (float(n1) > 0 and float(n2) > 0):
        raise ParameterError("f-numbers must be positive")
    residual = net.predict(aperture_input(image, n1, n2), fnumber_condition(n1, n2))
    return image.with_data(image.data + residual)


def check_aperture_direction(n1, n2):
    if not float(n2) < float(n1):
        raise ParameterError(
            f"aperture pairs must go from small to large aperture (n2 < n1), got {n1} -> {n2}")


def train_aperture(pairs, net: ApertureNet, schedule: TrainSchedule | None = None,
                   epochs: int | None = None, rng=None) -> tuple[ApertureNet, list[float]]:
    """Train on ``(I_ns, n1, n2, target)`` tuples; returns ``(net, loss_curve)``."""
    schedule = schedule or TrainSchedule()
    examples = []
    for image, n1, n2, target in pairs:
        check_aperture_direction(n1, n2)
        examples.append((aperture_input(image, n1, n2), image.data, target.data,
                         fnumber_condition(n1, n2)))
    epochs = schedule.aperture_epochs if epochs is None else epochs
    curve = train_residual(net, examples, epochs, schedule, rng, label="aperture")
    return net, curve
