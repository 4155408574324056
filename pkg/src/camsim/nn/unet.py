"""Encoder-decoder with skip connections and optional gates on the skips."""

from __future__ import annotations

import numpy as np

from .layers import AvgPool2, Conv2d, Resample, conv_block


class EncoderDecoder:
    """U-shaped network with ``depth`` resolution levels.

    Widths double per level starting from ``base_width``. Down-sampling is
    2x2 average pooling, up-sampling is corner-aligned bilinear resampling.
    When ``gate_factory`` is given, each skip feature ``F_l`` is replaced by
    ``gate(F_l, F_r, cond)`` where ``F_r`` is the coarser decoder feature
    one level below. The 1x1 output head is zero-initialized.
    """

    def __init__(self, in_channels, out_channels, base_width=16, depth=3,
                 gate_factory=None, seed=0):
        rng = np.random.default_rng(seed)
        widths = [base_width * 2 ** level for level in range(depth)]
        self.depth = depth
        self.in_channels, self.out_channels = in_channels, out_channels
        self.base_width = base_width
        self.encoders, self.pools = [], []
        cin = in_channels
        for level in range(depth - 1):
            self.encoders.append(conv_block(cin, widths[level], rng, f"enc{level}"))
            self.pools.append(AvgPool2())
            cin = widths[level]
        self.bottleneck = conv_block(cin, widths[-1], rng, "bottleneck")
        self.ups = [Resample("bilinear") for _ in range(depth - 1)]
        self.decoders = [conv_block(widths[level + 1] + widths[level], widths[level], rng, f"dec{level}")
                         for level in range(depth - 1)]
        self.gates = None
        if gate_factory is not None:
            self.gates = [gate_factory(widths[level], widths[level + 1], rng, f"gate{level}")
                          for level in range(depth - 1)]
        self.head = Conv2d(widths[0], out_channels, 1, zero_init=True, name="head")

    def parameters(self):
        params = []
        for enc in self.encoders:
            params += enc.parameters()
        params += self.bottleneck.parameters()
        for dec in self.decoders:
            params += dec.parameters()
        for gate in self.gates or []:
            params += gate.parameters()
        return params + self.head.parameters()

    def forward(self, x, cond=None):
        skips = []
        h = x
        for enc, pool in zip(self.encoders, self.pools):
            h = enc.forward(h)
            skips.append(h)
            h = pool.forward(h)
        h = self.bottleneck.forward(h)
        self._split = []
        for level in reversed(range(self.depth - 1)):
            skip = skips[level]
            up = self.ups[level].forward(h, skip.shape[1:3])
            if self.gates is not None:
                skip = self.gates[level].forward(skip, h, cond)
            self._split.append(up.shape[3])
            h = self.decoders[level].forward(np.concatenate([up, skip], axis=3))
        self._split.reverse()
        return self.head.forward(h)

    def backward(self, dy):
        dh = self.head.backward(dy)
        dskips = []
        for level in range(self.depth - 1):
            dcat = self.decoders[level].backward(dh)
            k = self._split[level]
            dup, dskip = dcat[..., :k], dcat[..., k:]
            dh = self.ups[level].backward(dup)
            if self.gates is not None:
                dskip, dgate = self.gates[level].backward(dskip)
                dh = dh + dgate
            dskips.append(dskip)
        dh = self.bottleneck.backward(dh)
        for level in reversed(range(self.depth - 1)):
            dh = self.pools[level].backward(dh) + dskips[level]
            dh = self.encoders[level].backward(dh)
        return dh
