"""3D patch tokenization and structure-agnostic random masking.

A field of shape (n, h, w) is cut into non-overlapping (q, p, p) blocks,
flattened row-major over (channel-group, patch-row, patch-col) into a
token matrix of shape (n_tokens, d) with d = q * p * p. Masking zeroes
whole patches after restoring tokens to field shape; inputs are z-scored
upstream, so zero is the climatological mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gridio import GridField


@dataclass(frozen=True)
class PatchConfig:
    q: int = 2  # channels per patch
    p: int = 16  # spatial patch side

    def __post_init__(self):
        if self.q < 1 or self.p < 1:
            raise ConfigError("patch dims must be positive")

    @property
    def d(self) -> int:
        return self.q * self.p * self.p

    def check_divisibility(self, n: int, h: int, w: int) -> None:
        if n % self.q or h % self.p or w % self.p:
            raise ConfigError(
                f"patch ({self.q},{self.p}) does not divide field ({n},{h},{w})"
            )

    def n_tokens(self, n: int, h: int, w: int) -> int:
        self.check_divisibility(n, h, w)
        return (n * h * w) // self.d


@dataclass(frozen=True)
class MaskSet:
    total: int
    ratio: float
    masked_indices: np.ndarray  # sorted unique indices into [0, total)
    seed: int

    def __post_init__(self):
        idx = np.asarray(self.masked_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.total):
            raise ConfigError("mask indices out of range")
        if idx.size != len(np.unique(idx)):
            raise ConfigError("mask indices must be unique")
        object.__setattr__(self, "masked_indices", np.sort(idx))

    def __len__(self) -> int:
        return int(self.masked_indices.size)


def tokenize(field: GridField | np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Field (n, h, w) -> token matrix (n_tokens, d), lossless."""
    values = field.values if isinstance(field, GridField) else np.asarray(field)
    n, h, w = values.shape
    cfg.check_divisibility(n, h, w)
    q, p = cfg.q, cfg.p
    blocks = values.reshape(n // q, q, h // p, p, w // p, p)
    tokens = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(-1, cfg.d)
    return tokens


def detokenize(tokens: np.ndarray, cfg: PatchConfig, n: int, h: int, w: int) -> np.ndarray:
    """Exact inverse of :func:`tokenize`; returns an (n, h, w) array."""
    cfg.check_divisibility(n, h, w)
    expected = (n * h * w) // cfg.d
    if tokens.shape != (expected, cfg.d):
        raise ConfigError(
            f"token matrix {tokens.shape} does not match "
            f"({expected}, {cfg.d}) for field ({n},{h},{w})"
        )
    q, p = cfg.q, cfg.p
    blocks = tokens.reshape(n // q, h // p, w // p, q, p, p)
    return blocks.transpose(0, 3, 1, 4, 2, 5).reshape(n, h, w)


def make_mask(n_tokens: int, ratio: float, seed: int) -> MaskSet:
    """Uniform sample without replacement of round(ratio * n_tokens) tokens."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("mask ratio must lie in [0, 1]")
    count = int(math.floor(ratio * n_tokens + 0.5))  # round half up
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    indices = rng.permutation(n_tokens)[:count]
    return MaskSet(total=n_tokens, ratio=ratio, masked_indices=indices, seed=seed)


def apply_mask(
    field: GridField | np.ndarray, mask: MaskSet, cfg: PatchConfig
) -> np.ndarray:
    """Zero the masked patches, restored to field shape.

    Unmasked patches stay bit-identical to the input.
    """
    values = field.values if isinstance(field, GridField) else np.asarray(field)
    n, h, w = values.shape
    if mask.total != cfg.n_tokens(n, h, w):
        raise ConfigError(
            f"mask built for {mask.total} tokens, field has {cfg.n_tokens(n, h, w)}"
        )
    tokens = tokenize(values, cfg).copy()
    tokens[mask.masked_indices] = 0.0
    return detokenize(tokens, cfg, n, h, w)
