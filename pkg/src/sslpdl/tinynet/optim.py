"""Training state and optimizer updates (Adam with bias correction, SGD)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, TrainingError
from .autodiff import Tensor
from .model import ArchConfig, TinyNet


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adam"  # adam | sgd
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.kind!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")


class TrainState:
    """Exclusively-owned bundle of model params, moments, and step count."""

    def __init__(self, model: TinyNet, opt: OptimConfig, seed: int):
        self.model = model
        self.opt = opt
        self.seed = seed
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in model.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in model.params.items()}
        self.frozen: set[str] = set()

    def freeze(self, names) -> None:
        self.frozen.update(names)

    def train_step(self, batch, loss_fn: Callable[[TinyNet, object], Tensor]) -> float:
        """One optimizer step; returns the (finite) loss value."""
        for p in self.model.params.values():
            p.zero_grad()
        loss = loss_fn(self.model, batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError("non-finite training loss", self.step_count)
        loss.backward()
        self.apply_gradients()
        return value

    def apply_gradients(self) -> None:
        opt = self.opt
        t = self.step_count + 1
        for name, p in self.model.params.items():
            if name in self.frozen:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if opt.kind == "adam":
                m = self.m[name]
                v = self.v[name]
                m *= opt.beta1
                m += (1.0 - opt.beta1) * g
                v *= opt.beta2
                v += (1.0 - opt.beta2) * (g * g)
                mhat = m / (1.0 - opt.beta1**t)
                vhat = v / (1.0 - opt.beta2**t)
                p.data = p.data - opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
            else:
                p.data = p.data - opt.lr * g
        self.step_count = t


def init_state(arch: ArchConfig, opt: OptimConfig, seed: int) -> TrainState:
    return TrainState(TinyNet(arch, seed), opt, seed)
