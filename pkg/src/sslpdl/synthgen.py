"""Synthetic rainfall truth and biased NWP-like forecasts.

The generator stands in for a proprietary forecast/analysis pair. It is
tuned so the training data carries the three phenomena the downstream
method targets: strong class imbalance (~90% dry pixels, ~0.5% heavy
rain), a spatial displacement bias, and one-sided underestimation of
extremes in the forecast. Everything is a pure function of
(config, sample_index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, GridValidationError
from .gridio import DatasetManifest, GridField, ManifestEntry, write_grid

RAIN_MAX = 100.0  # exclusive upper bound of the rainfall domain, mm/h
_RAIN_CLIP = RAIN_MAX - 1e-4
HEAVY_MM = 10.0
# Noise is never allowed to push a dry-side pixel across the heavy
# threshold; the extreme bias has to stay one-sided to be learnable.
_HEAVY_CAP = HEAVY_MM - 1e-4

_STREAM_TRUTH = 0
_STREAM_FORECAST = 1

_DEFAULT_VAR_NAMES = (
    "rain", "rh_850", "t_850", "u_850", "v_850", "rh_500", "t_500", "z_500",
    "u_500", "v_500", "t_2m", "slp", "u_10", "v_10", "z_100", "rh_925",
)


@dataclass(frozen=True)
class RainField:
    """An (h, w) rainfall-rate field in mm/h, values in [0, 100)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise GridValidationError(f"rain field must be 2-d, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridValidationError("rain field contains non-finite values")
        if v.size and (v.min() < 0.0 or v.max() >= RAIN_MAX):
            raise GridValidationError("rainfall outside [0, 100)")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BiasConfig:
    shift_rows: int = 4
    shift_cols: int = 3
    extreme_damping: float = 0.8
    noise_std: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.extreme_damping <= 1.0:
            raise ConfigError("extreme_damping must lie in [0, 1]")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    height: int = 96
    width: int = 64
    n_vars: int = 8
    seed: int = 0
    rain_blob_rate: float = 1.6
    intensity_tail: float = 0.95
    bias: BiasConfig = field(default_factory=BiasConfig)
    covariate_corr: float = 0.6

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("grid dimensions must be positive")
        if self.n_vars < 1:
            raise ConfigError("need at least the rain channel")
        if not 0.0 <= self.covariate_corr <= 1.0:
            raise ConfigError("covariate_corr must lie in [0, 1]")

    @classmethod
    def from_json(cls, doc: str | dict) -> "SynthConfig":
        data = json.loads(doc) if isinstance(doc, str) else dict(doc)
        bias = BiasConfig(**data.pop("bias", {}))
        return cls(bias=bias, **data)


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream, index))
    )


def gen_truth(cfg: SynthConfig, sample_index: int) -> RainField:
    """Superposed smooth rain blobs with heavy-tailed peak intensities."""
    rng = _rng(cfg.seed, _STREAM_TRUTH, sample_index)
    h, w = cfg.height, cfg.width
    total = np.zeros((h, w), dtype=np.float64)
    n_blobs = rng.poisson(cfg.rain_blob_rate)
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    for _ in range(n_blobs):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        sy = rng.uniform(3.0, 8.0)
        sx = rng.uniform(3.0, 8.0)
        # Pareto-tailed peak: many drizzle blobs, occasional downpours.
        peak = 0.8 * rng.pareto(cfg.intensity_tail) + 0.2
        blob = peak * np.exp(
            -0.5 * (((rows - cy) / sy) ** 2 + ((cols - cx) / sx) ** 2)
        )
        total += blob
    np.clip(total, 0.0, _RAIN_CLIP, out=total)
    total[total < 1e-3] = 0.0
    return RainField(values=total)


def _shift_zero_fill(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(a)
    h, w = a.shape
    src_r = slice(max(0, -dr), min(h, h - dr))
    dst_r = slice(max(0, dr), min(h, h + dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[dst_r, dst_c] = a[src_r, src_c]
    return out


def _standardized(a: np.ndarray) -> np.ndarray:
    std = a.std()
    if std < 1e-8:
        return np.zeros_like(a)
    return (a - a.mean()) / std


def gen_forecast(truth: RainField, cfg: SynthConfig, sample_index: int) -> GridField:
    """Biased forecast: shifted, extreme-damped rain plus covariates.

    Channel 0 is forecast rain; the heavy-rain pixel count of channel 0
    never exceeds the truth's on any field. The remaining channels share
    the forecast's spatial displacement and carry the rain signal in
    compositional form: paired "ingredient" channels whose product
    tracks the smoothed rain intensity (instability x moisture flavor),
    plus linearly correlated and pure-noise channels. Recovering rain
    from the covariates therefore requires combining variables, which is
    what the reconstruction pre-training is meant to learn.
    """
    rng = _rng(cfg.seed, _STREAM_FORECAST, sample_index)
    bias = cfg.bias
    shifted = _shift_zero_fill(
        truth.values.astype(np.float64), bias.shift_rows, bias.shift_cols
    )

    noise = rng.standard_normal(shifted.shape)
    noise = _standardized(gaussian_filter(noise, sigma=4.0)) * bias.noise_std
    noisy = np.clip(shifted + noise, 0.0, _RAIN_CLIP)
    heavy = shifted >= HEAVY_MM
    capped = np.where(
        heavy, noisy, np.minimum(noisy, np.maximum(shifted, _HEAVY_CAP))
    )
    rain = np.where(
        capped >= HEAVY_MM, capped * (1.0 - bias.extreme_damping), capped
    )
    np.clip(rain, 0.0, _RAIN_CLIP, out=rain)

    # smoothed rain signal on the displaced grid, shared by all covariates
    signal = _standardized(gaussian_filter(shifted, sigma=3.0))
    rho = cfg.covariate_corr
    mix = np.sqrt(max(1.0 - rho * rho, 0.0))

    def smooth_noise(sigma):
        return _standardized(
            gaussian_filter(rng.standard_normal(shifted.shape), sigma=sigma)
        )

    channels = [rain]
    pair_gate = None
    for k in range(1, cfg.n_vars):
        slot = (k - 1) % 4
        if slot == 0:
            # first ingredient: independent positive envelope
            pair_gate = 0.6 * smooth_noise(6.0)
            cov = np.exp(pair_gate)
        elif slot == 1:
            # second ingredient: product with the gate recovers the signal
            kappa = 1.2 if k < 4 else 0.8
            cov = np.exp(kappa * signal - pair_gate + 0.3 * smooth_noise(5.0))
        elif slot == 2:
            sign = -1.0 if (k // 4) % 2 else 1.0
            cov = sign * (rho * signal + mix * smooth_noise(5.0))
        else:
            cov = smooth_noise(5.0)
        # arbitrary affine ranges so channels look like distinct units
        channels.append(cov * (2.0 + k) + 10.0 * k)

    names = tuple(
        _DEFAULT_VAR_NAMES[i] if i < len(_DEFAULT_VAR_NAMES) else f"var{i}"
        for i in range(cfg.n_vars)
    )
    return GridField(var_names=names, values=np.stack(channels))


def truth_to_grid(truth: RainField) -> GridField:
    """Wrap a rain field as a single-variable grid for storage."""
    return GridField(var_names=("rain",), values=truth.values[None, :, :])


def grid_to_truth(grid: GridField) -> RainField:
    if grid.n_vars != 1:
        raise GridValidationError("truth grid must have exactly one variable")
    return RainField(values=grid.values[0].astype(np.float64))


_EPOCH = datetime(2020, 6, 1)
_STEP = timedelta(hours=6)


def gen_dataset(
    cfg: SynthConfig,
    counts: dict[str, int] | tuple[int, int, int],
    out_dir: str | Path,
) -> DatasetManifest:
    """Write truth/forecast pairs plus a JSON manifest under ``out_dir``.

    Splits get disjoint, contiguous sample-index ranges, so regenerating
    with the same config is byte-identical.
    """
    if not isinstance(counts, dict):
        counts = {"train": counts[0], "val": counts[1], "test": counts[2]}
    if any(c <= 0 for c in counts.values()):
        raise ConfigError("split counts must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    index = 0
    for split in ("train", "val", "test"):
        for _ in range(counts.get(split, 0)):
            truth = gen_truth(cfg, index)
            forecast = gen_forecast(truth, cfg, index)
            truth_name = f"truth_{index:05d}.sslg"
            fcst_name = f"fcst_{index:05d}.sslg"
            write_grid(truth_to_grid(truth), out_dir / truth_name)
            write_grid(forecast, out_dir / fcst_name)
            entries.append(
                ManifestEntry(
                    sample_id=f"s{index:05d}",
                    forecast=fcst_name,
                    truth=truth_name,
                    timestamp=(_EPOCH + _STEP * index).isoformat(timespec="minutes"),
                    split=split,
                )
            )
            index += 1
    manifest = DatasetManifest(entries)
    manifest.save(out_dir / "manifest.json")
    return manifest
