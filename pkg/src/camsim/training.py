"""Training schedule and the shared residual-learning loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateDataError, ParameterError
from .nn import adam_step, l1_loss, step_lr, zero_grads

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    """Per-stage epochs and optimizer settings.

    The defaults are the full published schedule; :meth:`desk` is the
    shortened schedule used for CPU-scale runs.
    """

    exposure_epochs: int = 5
    noise_epochs: int = 30
    aperture_epochs: int = 30
    joint_epochs: int = 10
    batch_size: int = 2
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_every: int = 20
    patch_size: int = 64
    pairs_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self):
        for f in ("exposure_epochs", "noise_epochs", "aperture_epochs", "joint_epochs"):
            if getattr(self, f) < 0:
                raise ParameterError(f"{f} must be >= 0")
        if not self.lr > 0:
            raise ParameterError("lr must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainSchedule":
        base = dict(exposure_epochs=2, noise_epochs=6, aperture_epochs=6, joint_epochs=2,
                    pairs_per_epoch=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def lr_at(self, epoch: int) -> float:
        return step_lr(self.lr, epoch, self.lr_decay, self.decay_every)


def random_crop(arrays, size, rng):
    """Crop the same random window out of every (H, W, C) array."""
    h, w = arrays[0].shape[:2]
    if size is None or (h <= size and w <= size):
        return arrays
    ch, cw = min(size, h), min(size, w)
    i = int(rng.integers(0, h - ch + 1))
    j = int(rng.integers(0, w - cw + 1))
    return [a[i:i + ch, j:j + cw] for a in arrays]


def train_residual(net, examples, epochs: int, schedule: TrainSchedule, rng=None,
                   label: str = "net") -> list[float]:
    """Fit ``net`` so that ``base + net(inputs)`` matches ``target`` under L1.

    ``examples`` holds ``(inputs, base, target, cond)`` tuples of (H, W, C)
    arrays (``cond`` may be None). Returns the mean training loss per epoch.
    """
    if not examples:
        raise DegenerateDataError(f"no training pairs for {label}")
    rng = rng if rng is not None else np.random.default_rng(schedule.seed)
    params = net.parameters()
    curve = []
    for epoch in range(epochs):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(len(examples))
        if schedule.pairs_per_epoch is not None:
            order = order[:schedule.pairs_per_epoch]
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            batch = [random_crop(list(examples[k][:3]), schedule.patch_size, rng)
                     for k in order[start:start + schedule.batch_size]]
            conds = [examples[k][3] for k in order[start:start + schedule.batch_size]]
            shapes = {b[0].shape for b in batch}
            if len(shapes) > 1:
                # mixed frame sizes: fall back to one sample per step
                groups = [[i] for i in range(len(batch))]
            else:
                groups = [list(range(len(batch)))]
            for g in groups:
                inp = np.stack([batch[i][0] for i in g])
                residual_target = np.stack([batch[i][2] - batch[i][1] for i in g])
                cond = None if conds[g[0]] is None else np.stack([conds[i] for i in g])
                zero_grads(params)
                pred = net.forward(inp, cond)
                loss, grad = l1_loss(pred, residual_target)
                net.backward(grad)
                adam_step(params, lr)
                losses.append(loss)
        curve.append(float(np.mean(losses)))
        log.info("%s epoch %d/%d lr=%.1e loss=%.5f", label, epoch + 1, epochs, lr, curve[-1])
    return curve
