"""Training objectives: masked reconstruction loss and mixed weighted
cross-entropy over one-hot plus density labels."""

from __future__ import annotations

import json
from dataclasses import dataclass
import numpy as np

from .errors import ConfigError, NumericError
from .patching import MaskSet, PatchConfig, tokenize
from .tinynet import Tensor, logsumexp
from .tinynet.autodiff import mul, take_rows, tensor_sum


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.25
    class_weights: tuple[float, ...] | None = None  # None -> all ones

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.class_weights is not None:
            w = tuple(float(x) for x in self.class_weights)
            if any(x < 0 for x in w) or not any(x > 0 for x in w):
                raise ConfigError("class weights must be non-negative, not all zero")
            object.__setattr__(self, "class_weights", w)

    def weights(self, n_classes: int) -> np.ndarray:
        if self.class_weights is None:
            return np.ones(n_classes)
        if len(self.class_weights) != n_classes:
            raise ConfigError(
                f"{len(self.class_weights)} weights for {n_classes} classes"
            )
        return np.asarray(self.class_weights, dtype=np.float64)

    @classmethod
    def from_json(cls, doc: str | dict) -> "LossConfig":
        data = json.loads(doc) if isinstance(doc, str) else dict(doc)
        if data.get("class_weights") is not None:
            data["class_weights"] = tuple(data["class_weights"])
        return cls(**data)


def inverse_frequency_weights(fractions: np.ndarray, floor: float = 1e-4) -> tuple:
    """Class weights 1/frequency, normalized to mean 1."""
    f = np.maximum(np.asarray(fractions, dtype=np.float64), floor)
    w = 1.0 / f
    return tuple(w / w.mean())


def _batched_tokens(x: Tensor, cfg: PatchConfig) -> Tensor:
    b, n, h, w = x.shape
    cfg.check_divisibility(n, h, w)
    q, p = cfg.q, cfg.p
    t = x.reshape((b, n // q, q, h // p, p, w // p, p))
    t = t.transpose((0, 1, 3, 5, 2, 4, 6))
    return t.reshape((b, (n * h * w) // cfg.d, cfg.d))


def rec_loss(
    x_hat: Tensor, x: np.ndarray, mask: MaskSet, cfg: PatchConfig
) -> Tensor:
    """Mean over masked patches of the squared L2 reconstruction error.

    ``x_hat`` and ``x`` are (B, n, h, w); the loss averages the
    per-sample value over the batch. Empty masks give 0 by convention.
    """
    x = np.asarray(x)
    if x_hat.shape != x.shape:
        raise ConfigError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    b, n, h, w = x.shape
    if mask.total != cfg.n_tokens(n, h, w):
        raise ConfigError("mask does not match the patch layout")
    if len(mask) == 0:
        return Tensor(np.asarray(0.0, dtype=x_hat.dtype))
    pred_tokens = take_rows(
        _batched_tokens(x_hat, cfg), mask.masked_indices, axis=1, assume_unique=True
    )
    true_tokens = np.stack([tokenize(s, cfg)[mask.masked_indices] for s in x])
    diff = pred_tokens - Tensor(true_tokens.astype(x_hat.dtype))
    total = tensor_sum(mul(diff, diff))
    return mul(total, 1.0 / (b * len(mask)))


def seg_loss(
    logits: Tensor,
    y: np.ndarray,
    y_star: np.ndarray,
    cfg: LossConfig,
) -> Tensor:
    """Weighted cross-entropy against the beta-mixed target.

    Per pixel: -sum_i w_i (beta*y_i + (1-beta)*y*_i) log softmax(logits)_i,
    averaged over batch and pixels. Uses log-sum-exp stabilization.
    """
    y = np.asarray(y, dtype=np.float64)
    y_star = np.asarray(y_star, dtype=np.float64)
    if logits.shape != y.shape or y.shape != y_star.shape:
        raise ConfigError(
            f"shape mismatch: logits {logits.shape}, y {y.shape}, y* {y_star.shape}"
        )
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits in seg_loss")
    b, c, h, w = logits.shape
    weights = cfg.weights(c)
    target = cfg.beta * y + (1.0 - cfg.beta) * y_star
    weighted = (weights[None, :, None, None] * target).astype(logits.dtype)
    log_softmax = logits - logsumexp(logits, axis=1, keepdims=True)
    total = tensor_sum(mul(log_softmax, Tensor(weighted)))
    return mul(total, -1.0 / (b * h * w))
