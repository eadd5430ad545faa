"""Hierarchical encoder with offset-based aggregation plus two
multi-scale fusion decoders (reconstruction and segmentation).

The encoder tokenizes the input into (q, p, p) patches, embeds them with
a learnable positional embedding, restores the field shape, then runs a
two-step stride-2 stem and four stages at strides 4/8/16/32. Each stage
holds one pre-norm residual block whose aggregation is either deformable
("A") or a plain convolution ("B") per the pattern string. Decoders
project the pyramid laterally to a common width and fuse top-down with
nearest-neighbor upsampling.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..precision import active_dtype
from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv2d, LayerNorm, Linear, OffsetConv2d, ParamRegistry

N_STAGES = 4
STEM_STRIDE = 4
FINAL_STRIDE = STEM_STRIDE * 2 ** (N_STAGES - 1)


@dataclass(frozen=True)
class ArchConfig:
    n_vars: int = 8
    height: int = 96
    width: int = 64
    n_classes: int = 3
    q: int = 2
    p: int = 16
    widths: tuple[int, ...] = (16, 32, 48, 64)
    pattern: str = "AABA"
    kernel: int = 3
    ffn_ratio: float = 2.0
    fuse_width: int = 32
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != N_STAGES or len(self.pattern) != N_STAGES:
            raise ConfigError(f"need {N_STAGES} stage widths and pattern chars")
        if any(c not in "AB" for c in self.pattern):
            raise ConfigError(f"pattern may only contain A/B, got {self.pattern!r}")
        if self.n_vars % self.q:
            raise ConfigError("q must divide n_vars")
        if self.height % self.p or self.width % self.p:
            raise ConfigError("p must divide height and width")
        if self.height % FINAL_STRIDE or self.width % FINAL_STRIDE:
            raise ConfigError(f"grid dims must be divisible by {FINAL_STRIDE}")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd")

    @property
    def d(self) -> int:
        return self.q * self.p * self.p

    @property
    def n_tokens(self) -> int:
        return (self.n_vars * self.height * self.width) // self.d

    def to_dict(self) -> dict:
        data = asdict(self)
        data["widths"] = list(self.widths)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        data = dict(data)
        data["widths"] = tuple(data["widths"])
        return cls(**data)


@dataclass
class FeaturePyramid:
    """Stage outputs z1..z4 at strides 4/8/16/32."""

    levels: list[Tensor]

    def __iter__(self):
        return iter(self.levels)


class _Block:
    """Pre-norm residual block: aggregation then a pointwise FFN."""

    def __init__(self, reg, name, channels, kind, kernel, ffn_ratio, ln_eps):
        self.ln1 = LayerNorm(reg, f"{name}.ln1", channels, eps=ln_eps)
        if kind == "A":
            self.agg = OffsetConv2d(reg, f"{name}.agg", channels, channels, k=kernel)
        else:
            self.agg = Conv2d(reg, f"{name}.agg", channels, channels, k=kernel)
        self.ln2 = LayerNorm(reg, f"{name}.ln2", channels, eps=ln_eps)
        hidden = max(1, int(round(channels * ffn_ratio)))
        self.ffn1 = Conv2d(reg, f"{name}.ffn1", channels, hidden, k=1, pad=0)
        self.ffn2 = Conv2d(reg, f"{name}.ffn2", hidden, channels, k=1, pad=0)

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.add(x, self.agg(self.ln1(x)))
        return ad.add(y, self.ffn2(ad.gelu(self.ffn1(self.ln2(y)))))


class _FusionDecoder:
    """Lateral 1x1 projections + top-down upsample-and-add + linear head."""

    def __init__(self, reg, name, widths, fuse_width, out_channels):
        self.laterals = [
            Conv2d(reg, f"{name}.lat{i + 1}", w, fuse_width, k=1, pad=0)
            for i, w in enumerate(widths)
        ]
        self.head = Conv2d(reg, f"{name}.head", fuse_width, out_channels, k=1, pad=0)

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        levels = pyramid.levels
        fused = self.laterals[-1](levels[-1])
        for i in range(len(levels) - 2, -1, -1):
            fused = ad.add(self.laterals[i](levels[i]), ad.upsample_nearest(fused, 2))
        return ad.upsample_nearest(self.head(fused), STEM_STRIDE)


class TinyNet:
    """Encoder + reconstruction head (phi) + segmentation head (theta)."""

    def __init__(self, arch: ArchConfig, seed: int):
        self.arch = arch
        self.seed = seed
        dtype = active_dtype()
        reg = ParamRegistry(
            np.random.default_rng(np.random.SeedSequence(entropy=seed)), dtype
        )
        d = arch.d
        self.embed = Linear(reg, "embed", d, d)
        self.pe = reg.small_uniform("pe", (arch.n_tokens, d))
        w0 = arch.widths[0]
        self.stem1 = Conv2d(reg, "stem.conv1", arch.n_vars, w0, k=3, stride=2)
        self.stem_ln1 = LayerNorm(reg, "stem.ln1", w0, eps=arch.ln_eps)
        self.stem2 = Conv2d(reg, "stem.conv2", w0, w0, k=3, stride=2)
        self.stem_ln2 = LayerNorm(reg, "stem.ln2", w0, eps=arch.ln_eps)
        self.downs = []
        self.down_lns = []
        self.blocks = []
        for i, (width, kind) in enumerate(zip(arch.widths, arch.pattern)):
            if i > 0:
                self.downs.append(
                    Conv2d(reg, f"down{i}.conv", arch.widths[i - 1], width, k=3, stride=2)
                )
                self.down_lns.append(
                    LayerNorm(reg, f"down{i}.ln", width, eps=arch.ln_eps)
                )
            self.blocks.append(
                _Block(
                    reg,
                    f"stage{i}",
                    width,
                    kind,
                    arch.kernel,
                    arch.ffn_ratio,
                    arch.ln_eps,
                )
            )
        self.rec_decoder = _FusionDecoder(
            reg, "rec", arch.widths, arch.fuse_width, arch.n_vars
        )
        self.seg_decoder = _FusionDecoder(
            reg, "seg", arch.widths, arch.fuse_width, arch.n_classes
        )
        self.params = reg.params

    # ---- parameter groups ------------------------------------------------
    def encoder_param_names(self) -> list[str]:
        return [
            n
            for n in self.params
            if not n.startswith("rec.") and not n.startswith("seg.")
        ]

    # ---- forward ----------------------------------------------------------
    def _tokenize(self, x: Tensor) -> Tensor:
        a = self.arch
        b = x.shape[0]
        t = x.reshape(
            (b, a.n_vars // a.q, a.q, a.height // a.p, a.p, a.width // a.p, a.p)
        )
        t = t.transpose((0, 1, 3, 5, 2, 4, 6))
        return t.reshape((b, a.n_tokens, a.d))

    def _detokenize(self, tokens: Tensor) -> Tensor:
        a = self.arch
        b = tokens.shape[0]
        t = tokens.reshape(
            (b, a.n_vars // a.q, a.height // a.p, a.width // a.p, a.q, a.p, a.p)
        )
        t = t.transpose((0, 1, 4, 2, 5, 3, 6))
        return t.reshape((b, a.n_vars, a.height, a.width))

    def encode(self, x) -> FeaturePyramid:
        """Masked or plain field (B, n, h, w) -> feature pyramid."""
        if not isinstance(x, Tensor):
            x = Tensor(np.ascontiguousarray(x, dtype=active_dtype()))
        if x.shape[1:] != (self.arch.n_vars, self.arch.height, self.arch.width):
            raise ConfigError(
                f"input shape {x.shape[1:]} does not match arch "
                f"({self.arch.n_vars},{self.arch.height},{self.arch.width})"
            )
        tokens = self._tokenize(x)
        embedded = ad.add(self.embed(tokens), self.pe)
        feat = self._detokenize(embedded)
        h = ad.gelu(self.stem_ln1(self.stem1(feat)))
        h = ad.gelu(self.stem_ln2(self.stem2(h)))
        levels = []
        for i, block in enumerate(self.blocks):
            if i > 0:
                h = self.down_lns[i - 1](self.downs[i - 1](h))
            h = block(h)
            levels.append(h)
        return FeaturePyramid(levels)

    def decode_rec(self, pyramid: FeaturePyramid) -> Tensor:
        """Reconstruction head: pyramid -> (B, n_vars, h, w)."""
        return self.rec_decoder(pyramid)

    def decode_seg(self, pyramid: FeaturePyramid) -> Tensor:
        """Segmentation head: pyramid -> (B, n_classes, h, w) logits."""
        return self.seg_decoder(pyramid)

    # ---- parameter io ------------------------------------------------------
    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        dtype = active_dtype()
        for name, tensor in self.params.items():
            if name not in arrays:
                raise ConfigError(f"missing parameter {name}")
            src = arrays[name]
            if src.shape != tensor.data.shape:
                raise ConfigError(
                    f"shape mismatch for {name}: {src.shape} vs {tensor.data.shape}"
                )
            tensor.data = np.ascontiguousarray(src, dtype=dtype)

    def copy_encoder_from(self, other: "TinyNet") -> None:
        """Copy encoder (+ reconstruction head) weights from another net."""
        for name in self.encoder_param_names():
            self.params[name].data = other.params[name].data.copy()


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Numerically stable softmax for plain arrays (inference paths)."""
    m = logits.max(axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=axis, keepdims=True)
