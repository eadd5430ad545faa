"""Rainfall labels: one-hot bins and probabilistic density labels.

Rainfall in [0, 100) mm/h is discretized by an ascending threshold set
(default 0.1 mm and 10 mm, giving no-rain / rain / heavy-rain classes).
The density label spreads each pixel's mass linearly between the two
classes bracketing its rainfall value and mixes in a uniform floor of
``alpha / n_classes``, so per-pixel probabilities always sum to one and
vary continuously with rainfall. The module also provides class-mass
reporting, rainy-day stratified sampling, pixel-ratio resampling, and
the augmentation operators used when over-sampling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import zoom as ndi_zoom

from .errors import ConfigError, SamplingError
from .gridio import DatasetManifest, GridField, ManifestEntry, read_grid
from .synthgen import RAIN_MAX, RainField, grid_to_truth

SIMPLEX_TOL = 1e-9

ONE_HOT = "one_hot"
DENSITY = "density"

AUGMENT_OPS = ("flip_h", "flip_v", "resize", "mixup", "gaussian_noise")
# geometry-free ops usable for manifest-tagged duplicates (mixup needs a partner)
_RESAMPLE_OPS = ("flip_h", "flip_v", "resize", "gaussian_noise")


@dataclass(frozen=True)
class LabelConfig:
    thresholds: tuple[float, ...] = (0.1, 10.0)
    alpha: float = 0.0
    pdl_complement: str = "adjacent"  # adjacent | renormalize

    def __post_init__(self):
        taus = tuple(float(t) for t in self.thresholds)
        if len(taus) < 1:
            raise ConfigError("need at least one threshold (two classes)")
        if not all(0.0 < a < RAIN_MAX for a in taus):
            raise ConfigError("thresholds must lie strictly inside (0, 100)")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigError("thresholds must be strictly ascending")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("alpha must lie in [0, 1)")
        if self.pdl_complement not in ("adjacent", "renormalize"):
            raise ConfigError(f"unknown pdl_complement {self.pdl_complement!r}")
        object.__setattr__(self, "thresholds", taus)

    @property
    def n_classes(self) -> int:
        return len(self.thresholds) + 1

    @classmethod
    def from_json(cls, doc: str | dict) -> "LabelConfig":
        data = json.loads(doc) if isinstance(doc, str) else dict(doc)
        if "thresholds" in data:
            data["thresholds"] = tuple(data["thresholds"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(
            {
                "thresholds": list(self.thresholds),
                "alpha": self.alpha,
                "pdl_complement": self.pdl_complement,
            }
        )


@dataclass(frozen=True)
class LabelTensor:
    """Per-pixel class probabilities, (n_classes, h, w)."""

    probs: np.ndarray
    kind: str  # ONE_HOT | DENSITY

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.ndim != 3:
            raise ConfigError(f"label tensor must be 3-d, got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0 + SIMPLEX_TOL:
            raise ConfigError("label probabilities outside [0, 1]")
        sums = p.sum(axis=0)
        if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
            raise ConfigError("per-pixel label mass does not sum to 1")
        if self.kind == ONE_HOT and not np.all((p == 0.0) | (p == 1.0)):
            raise ConfigError("one-hot tensor has fractional entries")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[0]


def _check_gamma(gamma: np.ndarray) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.size and (g.min() < 0.0 or g.max() >= RAIN_MAX):
        raise ConfigError("rainfall outside [0, 100)")
    return g


def _bin_index(gamma: np.ndarray, taus: np.ndarray) -> np.ndarray:
    # lower-edge-inclusive half-open bins: class i covers [tau_{i-1}, tau_i)
    return np.searchsorted(taus, gamma, side="right")


def one_hot(gamma: float, cfg: LabelConfig) -> np.ndarray:
    """One-hot class vector for a single rainfall value."""
    g = _check_gamma(np.asarray([gamma]))
    idx = _bin_index(g, np.asarray(cfg.thresholds))[0]
    out = np.zeros(cfg.n_classes)
    out[idx] = 1.0
    return out


def _pdl_array(gamma: np.ndarray, cfg: LabelConfig) -> np.ndarray:
    """Density labels for a flat array of rainfall values -> (N, c)."""
    taus = np.asarray(cfg.thresholds)
    n = cfg.n_classes
    alpha = cfg.alpha
    uniform = alpha / n
    idx = _bin_index(gamma, taus)

    out = np.full((gamma.size, n), uniform)
    top = idx == n - 1
    interior = ~top

    lo = np.where(idx == 0, 0.0, taus[np.maximum(idx - 1, 0)])
    hi = taus[np.minimum(idx, len(taus) - 1)]
    rho = np.where(interior, (hi - gamma) / np.where(hi > lo, hi - lo, 1.0), 1.0)

    rows = np.arange(gamma.size)
    if cfg.pdl_complement == "adjacent":
        out[rows[interior], idx[interior]] = (1.0 - alpha) * rho[interior] + uniform
        out[rows[interior], idx[interior] + 1] = (
            (1.0 - alpha) * (1.0 - rho[interior]) + uniform
        )
    else:
        out[rows[interior], idx[interior]] = (1.0 - alpha) * rho[interior] + uniform
        out[interior] /= out[interior].sum(axis=1, keepdims=True)
    out[rows[top], n - 1] = (1.0 - alpha) + uniform
    return out


def pdl(gamma: float, cfg: LabelConfig) -> np.ndarray:
    """Probabilistic density label for a single rainfall value."""
    g = _check_gamma(np.asarray([gamma]))
    return _pdl_array(g, cfg)[0]


def label_field(
    rain: RainField, cfg: LabelConfig, kind: str = DENSITY
) -> LabelTensor:
    """Apply one-hot or density labeling per pixel."""
    g = _check_gamma(rain.values.ravel())
    if kind == ONE_HOT:
        idx = _bin_index(g, np.asarray(cfg.thresholds))
        flat = np.zeros((g.size, cfg.n_classes))
        flat[np.arange(g.size), idx] = 1.0
    elif kind == DENSITY:
        flat = _pdl_array(g, cfg)
    else:
        raise ConfigError(f"unknown label kind {kind!r}")
    probs = flat.T.reshape(cfg.n_classes, *rain.values.shape)
    return LabelTensor(probs=probs, kind=kind)


def class_field(rain: RainField, cfg: LabelConfig) -> np.ndarray:
    """Integer class indices per pixel (argmax of the one-hot label)."""
    g = _check_gamma(rain.values)
    return _bin_index(g, np.asarray(cfg.thresholds)).astype(np.int64)


def proportions(labels: Sequence[LabelTensor]) -> np.ndarray:
    """Per-class expected mass fraction over all pixels of all tensors."""
    labels = list(labels)
    if not labels:
        raise ConfigError("proportions needs at least one label tensor")
    c = labels[0].n_classes
    if any(t.n_classes != c for t in labels):
        raise ConfigError("inconsistent class counts")
    mass = np.zeros(c)
    pixels = 0
    for t in labels:
        mass += t.probs.reshape(c, -1).sum(axis=1)
        pixels += t.probs.shape[1] * t.probs.shape[2]
    return mass / pixels


def write_proportions_report(
    path: str | Path, one_hot_fracs: np.ndarray, density_fracs: np.ndarray
) -> None:
    """CSV report with columns (class, one_hot_frac, density_frac)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "one_hot_frac", "density_frac"])
        for i, (a, b) in enumerate(zip(one_hot_fracs, density_fracs)):
            writer.writerow([i, f"{a:.6f}", f"{b:.6f}"])


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RainyDayRule:
    """A sample is rainy when at least min_frac of pixels exceed threshold."""

    threshold: float = 0.1
    min_frac: float = 0.01


def _load_truth(entry: ManifestEntry, root: Path) -> RainField:
    return grid_to_truth(read_grid(Path(root) / entry.truth))


def _unique_copy(entry: ManifestEntry, tag: str) -> ManifestEntry:
    return replace(entry, sample_id=f"{entry.sample_id}~{tag}")


def sample_rainy_days(
    manifest: DatasetManifest,
    rainy_fraction: float,
    rule: RainyDayRule,
    root: str | Path,
    seed: int = 0,
) -> DatasetManifest:
    """Stratified draw keeping the manifest size, rainy share as requested.

    Draws with replacement once a stratum is exhausted; duplicated
    entries get suffixed sample ids so the manifest stays well formed.
    """
    if not 0.0 <= rainy_fraction <= 1.0:
        raise ConfigError("rainy_fraction must lie in [0, 1]")
    root = Path(root)
    rainy, dry = [], []
    for entry in manifest.entries:
        truth = _load_truth(entry, root)
        frac = float((truth.values > rule.threshold).mean())
        (rainy if frac >= rule.min_frac else dry).append(entry)

    total = len(manifest.entries)
    n_rainy = int(round(rainy_fraction * total))
    n_dry = total - n_rainy
    if n_rainy > 0 and not rainy:
        raise SamplingError("no rainy samples available")
    if n_dry > 0 and not dry:
        raise SamplingError("no non-rainy samples available")

    rng = np.random.default_rng(seed)
    out: list[ManifestEntry] = []
    for stratum, wanted in ((rainy, n_rainy), (dry, n_dry)):
        if wanted == 0:
            continue
        if wanted <= len(stratum):
            picks = rng.choice(len(stratum), size=wanted, replace=False)
        else:
            picks = rng.choice(len(stratum), size=wanted, replace=True)
        seen: dict[int, int] = {}
        for p in sorted(int(i) for i in picks):
            count = seen.get(p, 0)
            seen[p] = count + 1
            entry = stratum[p]
            out.append(entry if count == 0 else _unique_copy(entry, f"r{count}"))
    return DatasetManifest(out)


def _no_rain_stats(
    manifest: DatasetManifest, root: Path, threshold: float
) -> tuple[list[int], list[int]]:
    """Per-entry (no-rain pixel count, pixel count)."""
    dry_counts, sizes = [], []
    for entry in manifest.entries:
        truth = _load_truth(entry, root)
        dry_counts.append(int((truth.values < threshold).sum()))
        sizes.append(truth.values.size)
    return dry_counts, sizes


def resample_pixel_ratio(
    manifest: DatasetManifest,
    target_no_rain_frac: float,
    mode: str,
    root: str | Path,
    threshold: float = 0.1,
    seed: int = 0,
    tolerance: float = 0.02,
) -> DatasetManifest:
    """Move the pixel-level no-rain fraction to the target by dropping
    (``under``) or duplicating-with-augmentation (``over``) samples."""
    if mode not in ("under", "over"):
        raise ConfigError(f"mode must be 'under' or 'over', got {mode!r}")
    if not 0.0 < target_no_rain_frac < 1.0:
        raise ConfigError("target fraction must lie in (0, 1)")
    root = Path(root)
    dry_counts, sizes = _no_rain_stats(manifest, root, threshold)
    dry = float(sum(dry_counts))
    total = float(sum(sizes))
    current = dry / total
    if abs(current - target_no_rain_frac) <= tolerance:
        return DatasetManifest(list(manifest.entries))

    # entries sorted by per-sample no-rain fraction, driest first
    order = sorted(
        range(len(manifest.entries)),
        key=lambda i: (-dry_counts[i] / sizes[i], manifest.entries[i].sample_id),
    )

    if mode == "under":
        keep = set(range(len(manifest.entries)))
        # walk from whichever end moves the aggregate toward the target
        candidates = order if current > target_no_rain_frac else order[::-1]
        for i in candidates:
            if abs(current - target_no_rain_frac) <= tolerance:
                break
            if len(keep) <= 1:
                break
            new_dry = dry - dry_counts[i]
            new_total = total - sizes[i]
            new_frac = new_dry / new_total
            if abs(new_frac - target_no_rain_frac) >= abs(
                current - target_no_rain_frac
            ):
                break
            keep.discard(i)
            dry, total, current = new_dry, new_total, new_frac
        if abs(current - target_no_rain_frac) > tolerance:
            raise SamplingError(
                f"under-sampling cannot reach {target_no_rain_frac:.3f}; "
                f"achieved {current:.3f}"
            )
        kept = [e for i, e in enumerate(manifest.entries) if i in keep]
        return DatasetManifest(kept)

    # over: duplicate samples from the end that moves toward the target,
    # cycling through all still-helpful candidates so copies stay varied
    rng = np.random.default_rng(seed)
    candidates = order[::-1] if current > target_no_rain_frac else order
    out = list(manifest.entries)
    copies = 0
    max_copies = 100 * len(manifest.entries)
    while abs(current - target_no_rain_frac) > tolerance:
        progressed = False
        for i in candidates:
            if abs(current - target_no_rain_frac) <= tolerance:
                break
            if copies >= max_copies:
                break
            new_dry = dry + dry_counts[i]
            new_total = total + sizes[i]
            new_frac = new_dry / new_total
            if abs(new_frac - target_no_rain_frac) >= abs(
                current - target_no_rain_frac
            ):
                continue
            op = _RESAMPLE_OPS[int(rng.integers(len(_RESAMPLE_OPS)))]
            entry = _unique_copy(manifest.entries[i], f"o{copies}")
            entry.augment = {"op": op, "seed": int(rng.integers(2**31 - 1))}
            out.append(entry)
            dry, total, current = new_dry, new_total, new_frac
            copies += 1
            progressed = True
        if not progressed or copies >= max_copies:
            if abs(current - target_no_rain_frac) > tolerance:
                raise SamplingError(
                    f"over-sampling cannot reach {target_no_rain_frac:.3f}; "
                    f"achieved {current:.3f}"
                )
            break
    return DatasetManifest(out)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

Sample = tuple[GridField, RainField]


def _resize_plane(plane: np.ndarray, factor: float) -> np.ndarray:
    h, w = plane.shape
    zoomed = ndi_zoom(plane, factor, order=1)
    zh, zw = zoomed.shape
    out = np.zeros_like(plane)
    if zh >= h:
        r0, c0 = (zh - h) // 2, (zw - w) // 2
        out[:] = zoomed[r0 : r0 + h, c0 : c0 + w]
    else:
        r0, c0 = (h - zh) // 2, (w - zw) // 2
        out[r0 : r0 + zh, c0 : c0 + zw] = zoomed
    return out


def augment(
    sample: Sample,
    op: str,
    seed: int = 0,
    partner: Sample | None = None,
    noise_std: float = 0.1,
    mixup_lam: float | None = None,
) -> Sample:
    """Apply one augmentation op to a (forecast, truth) pair.

    Geometric ops transform every forecast channel and the truth rain
    identically; gaussian noise touches forecast channels only; mixup
    blends with the partner sample at a Beta(0.2, 0.2) weight.
    """
    fcst, truth = sample
    rng = np.random.default_rng(seed)
    if op == "flip_h":
        x = fcst.values[:, :, ::-1].copy()
        y = truth.values[:, ::-1].copy()
    elif op == "flip_v":
        x = fcst.values[:, ::-1, :].copy()
        y = truth.values[::-1, :].copy()
    elif op == "resize":
        factor = float(rng.uniform(0.75, 1.25))
        x = np.stack([_resize_plane(p, factor) for p in fcst.values])
        y = _resize_plane(truth.values, factor)
    elif op == "mixup":
        if partner is None:
            raise ConfigError("mixup requires a partner sample")
        lam = float(rng.beta(0.2, 0.2)) if mixup_lam is None else float(mixup_lam)
        pf, pt = partner
        if pf.values.shape != fcst.values.shape:
            raise ConfigError("mixup partner shape mismatch")
        x = lam * fcst.values + (1.0 - lam) * pf.values
        y = lam * truth.values + (1.0 - lam) * pt.values
    elif op == "gaussian_noise":
        noise = rng.standard_normal(fcst.values.shape) * noise_std
        x = fcst.values + noise
        y = truth.values.copy()
    else:
        raise ConfigError(f"unknown augmentation op {op!r}")
    return (
        GridField(var_names=fcst.var_names, values=x),
        RainField(values=np.clip(y, 0.0, np.nextafter(RAIN_MAX, 0.0))),
    )
