"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError
from .layers import zero_grads


def gradient_check(loss_fn, params, delta: float = 1e-5, max_entries: int | None = None,
                   seed: int = 0) -> float:
    """Largest relative gradient error over ``params``.

    ``loss_fn(backward)`` must return the scalar loss and, when ``backward``
    is true, accumulate analytic gradients into each parameter's ``grad``.
    For every parameter tensor the error is
    ``max|analytic - central| / max(max|analytic|, max|central|, 1e-12)``
    over the checked entries; ``max_entries`` samples that many entries per
    tensor instead of all of them.
    """
    rng = np.random.default_rng(seed)
    zero_grads(params)
    base = loss_fn(True)
    if not math.isfinite(base):
        raise NumericError(f"loss is not finite: {base}")
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        a = analytic.reshape(-1)[idx]
        cd = np.empty(idx.size)
        for k, i in enumerate(idx):
            v0 = flat[i]
            flat[i] = v0 + delta
            f_plus = loss_fn(False)
            flat[i] = v0 - delta
            f_minus = loss_fn(False)
            flat[i] = v0
            cd[k] = (f_plus - f_minus) / (2.0 * delta)
        if not (np.all(np.isfinite(cd)) and np.all(np.isfinite(a))):
            raise NumericError(f"non-finite gradient for {p.name!r}")
        scale = max(np.abs(a).max(initial=0.0), np.abs(cd).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(a - cd).max(initial=0.0) / scale))
    return worst
