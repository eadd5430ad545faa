"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: int = 100,
    seed: int = 0,
) -> float:
    """Compare backprop gradients against (f(p+eps) - f(p-eps)) / 2eps.

    ``loss_fn`` must rebuild the graph on every call. Up to
    ``max_coords`` randomly chosen coordinates are probed per parameter.
    Returns the maximum relative error over all probed coordinates.
    Meaningful only in float64.
    """
    for t in params.values():
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    for t in params.values():
        t.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.items():
        size = t.data.size
        count = min(max_coords, size)
        coords = rng.choice(size, size=count, replace=False)
        for c in coords:
            original = t.data.flat[c]
            t.data.flat[c] = original + eps
            plus = loss_fn().item()
            t.data.flat[c] = original - eps
            minus = loss_fn().item()
            t.data.flat[c] = original
            numeric = (plus - minus) / (2.0 * eps)
            ana = analytic[name].flat[c]
            denom = max(abs(numeric), abs(ana))
            if denom < 1e-10:
                continue
            worst = max(worst, abs(numeric - ana) / denom)
    return worst
