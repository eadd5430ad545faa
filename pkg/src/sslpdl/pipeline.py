"""Experiment orchestration: data preparation, masked pre-training,
segmentation fine-tuning, evaluation, and the ablation harness.

All randomness is derived from the experiment seed by hashing, never
drawn from shared generator state, so every stage is reproducible and
resumable: epoch shuffles and batch masks depend only on
(seed, epoch, step).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .errors import ConfigError, DataError
from .gridio import (
    DatasetManifest,
    GridField,
    read_grid,
    zscore_apply,
    zscore_fit,
)
from .labeling import (
    DENSITY,
    ONE_HOT,
    LabelConfig,
    RainyDayRule,
    augment,
    class_field,
    label_field,
    resample_pixel_ratio,
    sample_rainy_days,
)
from .objectives import LossConfig, rec_loss, seg_loss
from .patching import PatchConfig, apply_mask, make_mask
from .synthgen import RainField, SynthConfig, gen_dataset, grid_to_truth
from .tinynet import (
    ArchConfig,
    OptimConfig,
    TinyNet,
    TrainState,
    load_checkpoint,
    save_checkpoint,
)
from .verify import contingency, iou_table, merge, miou_from_table, scores, write_eval_report

WINTER_MONTHS = {12, 1, 2}
LABELING_KINDS = ("pdl", "onehot", "smooth")


def stable_hash(obj) -> str:
    """Order-independent hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def derive_seed(base_seed: int, *parts) -> int:
    digest = stable_hash([base_seed, list(parts)])
    return int(digest[:15], 16)


@dataclass(frozen=True)
class StageConfig:
    mask_ratio: float
    epochs: int
    batch: int
    lr: float | None  # None -> optimizer default

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1]")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be >= 0 and batch >= 1")
        if self.lr is not None and self.lr < 0:
            raise ConfigError("stage lr must be >= 0")


@dataclass(frozen=True)
class PretrainConfig(StageConfig):
    mask_ratio: float = 0.75
    epochs: int = 10
    batch: int = 16
    lr: float | None = None
    exclude_winter: bool = True


@dataclass(frozen=True)
class FinetuneConfig(StageConfig):
    mask_ratio: float = 0.25
    epochs: int = 20
    batch: int = 16
    lr: float | None = 4e-4
    init: str = "pretrained"  # pretrained | scratch
    freeze_encoder: bool = False
    labeling: str = "pdl"  # pdl | onehot | smooth

    def __post_init__(self):
        super().__post_init__()
        if self.init not in ("pretrained", "scratch"):
            raise ConfigError(f"init must be pretrained|scratch, got {self.init!r}")
        if self.labeling not in LABELING_KINDS:
            raise ConfigError(f"labeling must be one of {LABELING_KINDS}")


@dataclass(frozen=True)
class SamplingConfig:
    rainy_fraction: float | None = 0.8
    rainy_threshold: float = 0.1
    rainy_min_frac: float = 0.01
    resample_target: float | None = None  # no-rain pixel fraction
    resample_mode: str = "under"


@dataclass(frozen=True)
class DataConfig:
    dir: str = "data"
    manifest: str | None = None  # default: <dir>/manifest.json
    counts: tuple[int, int, int] = (200, 20, 50)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def manifest_path(self) -> Path:
        if self.manifest is not None:
            return Path(self.manifest)
        return Path(self.dir) / "manifest.json"


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimConfig = field(default_factory=lambda: OptimConfig(lr=1e-3))
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    widths: tuple[int, ...] = (16, 32, 48, 64)
    pattern: str = "AABA"
    kernel: int = 3
    ffn_ratio: float = 2.0
    fuse_width: int = 32
    norm_sample_fraction: float = 1.0
    csi_mode: str = "pooled"  # pooled | per_sample

    def arch(self) -> ArchConfig:
        synth = self.data.synth
        return ArchConfig(
            n_vars=synth.n_vars,
            height=synth.height,
            width=synth.width,
            n_classes=self.label.n_classes,
            q=self.patch.q,
            p=self.patch.p,
            widths=self.widths,
            pattern=self.pattern,
            kernel=self.kernel,
            ffn_ratio=self.ffn_ratio,
            fuse_width=self.fuse_width,
        )

    def to_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "data": {
                "dir": self.data.dir,
                "manifest": self.data.manifest,
                "counts": list(self.data.counts),
                "synth": {**asdict(self.data.synth)},
            },
            "patch": {"q": self.patch.q, "p": self.patch.p},
            "label": {
                "thresholds": list(self.label.thresholds),
                "alpha": self.label.alpha,
                "pdl_complement": self.label.pdl_complement,
            },
            "loss": {
                "beta": self.loss.beta,
                "class_weights": list(self.loss.class_weights)
                if self.loss.class_weights
                else None,
            },
            "optimizer": asdict(self.optimizer),
            "pretrain": asdict(self.pretrain),
            "finetune": asdict(self.finetune),
            "sampling": asdict(self.sampling),
            "widths": list(self.widths),
            "pattern": self.pattern,
            "kernel": self.kernel,
            "ffn_ratio": self.ffn_ratio,
            "fuse_width": self.fuse_width,
            "norm_sample_fraction": self.norm_sample_fraction,
            "csi_mode": self.csi_mode,
        }
        return doc

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        kwargs = {}
        if "data" in doc:
            d = dict(doc.pop("data"))
            synth = SynthConfig.from_json(d.pop("synth", {}))
            counts = d.pop("counts", (200, 20, 50))
            if isinstance(counts, dict):
                counts = (counts["train"], counts["val"], counts["test"])
            kwargs["data"] = DataConfig(synth=synth, counts=tuple(counts), **d)
        if "patch" in doc:
            kwargs["patch"] = PatchConfig(**doc.pop("patch"))
        if "label" in doc:
            kwargs["label"] = LabelConfig.from_json(doc.pop("label"))
        if "loss" in doc:
            kwargs["loss"] = LossConfig.from_json(doc.pop("loss"))
        if "optimizer" in doc:
            kwargs["optimizer"] = OptimConfig(**doc.pop("optimizer"))
        if "pretrain" in doc:
            kwargs["pretrain"] = PretrainConfig(**doc.pop("pretrain"))
        if "finetune" in doc:
            kwargs["finetune"] = FinetuneConfig(**doc.pop("finetune"))
        if "sampling" in doc:
            kwargs["sampling"] = SamplingConfig(**doc.pop("sampling"))
        if "widths" in doc:
            kwargs["widths"] = tuple(doc.pop("widths"))
        for key in (
            "seed", "pattern", "kernel", "ffn_ratio", "fuse_width",
            "norm_sample_fraction", "csi_mode",
        ):
            if key in doc:
                kwargs[key] = doc.pop(key)
        if doc:
            raise ConfigError(f"unknown config keys: {sorted(doc)}")
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class RunReport:
    kind: str
    config_hash: str
    seed: int
    epoch_losses: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def numeric_fields(self) -> dict:
        """Everything that must be reproducible (excludes wall clock)."""
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "epoch_losses": self.epoch_losses,
            "metrics": self.metrics,
        }

    def save(self, path: str | Path) -> None:
        doc = dict(self.numeric_fields(), wall_clock_s=self.wall_clock_s)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


class Dataset:
    """Loads and caches (forecast, truth) pairs, applying augment tags."""

    def __init__(self, manifest: DatasetManifest, root: str | Path):
        self.manifest = manifest
        self.root = Path(root)
        self._cache: dict[str, tuple[GridField, RainField]] = {}

    def load(self, entry) -> tuple[GridField, RainField]:
        if entry.sample_id in self._cache:
            return self._cache[entry.sample_id]
        try:
            fcst = read_grid(self.root / entry.forecast)
            truth = grid_to_truth(read_grid(self.root / entry.truth))
        except OSError as exc:
            raise DataError(f"cannot load sample {entry.sample_id}: {exc}") from exc
        if entry.augment is not None:
            fcst, truth = augment(
                (fcst, truth), entry.augment["op"], seed=entry.augment.get("seed", 0)
            )
        self._cache[entry.sample_id] = (fcst, truth)
        return self._cache[entry.sample_id]


def _is_winter(entry) -> bool:
    return int(entry.timestamp[5:7]) in WINTER_MONTHS


def load_manifest(cfg: ExperimentConfig) -> tuple[DatasetManifest, Path]:
    path = cfg.data.manifest_path()
    if not path.exists():
        raise DataError(f"manifest not found: {path} (run `sslpdl gen` first)")
    return DatasetManifest.load(path), path.parent


def fit_normalization(cfg: ExperimentConfig, dataset: Dataset, manifest):
    """Population stats fitted on (a sampled subset of) the train split."""
    train = [e for e in manifest.entries if e.split == "train"]
    if not train:
        raise ConfigError("manifest has no train entries")
    frac = cfg.norm_sample_fraction
    if not 0.0 < frac <= 1.0:
        raise ConfigError("norm_sample_fraction must lie in (0, 1]")
    if frac < 1.0:
        rng = np.random.default_rng(derive_seed(cfg.seed, "norm-sample"))
        count = max(1, int(round(frac * len(train))))
        picks = sorted(rng.choice(len(train), size=count, replace=False))
        train = [train[i] for i in picks]
    fields = [dataset.load(e)[0] for e in train]
    grouping = {i: name for i, name in enumerate(fields[0].var_names)}
    return zscore_fit(fields, grouping), grouping


def _epoch_batches(n: int, batch: int, seed: int):
    order = np.random.default_rng(seed).permutation(n)
    for i in range(0, n, batch):
        yield order[i : i + batch]


def _normalized_batch(dataset, entries, stats, grouping):
    fields = []
    truths = []
    for e in entries:
        fcst, truth = dataset.load(e)
        fields.append(zscore_apply(fcst, stats, grouping).values)
        truths.append(truth)
    return np.stack(fields), truths


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def pretrain(
    cfg: ExperimentConfig,
    out_path: str | Path | None = None,
    resume_from: TrainState | None = None,
    epochs: int | None = None,
) -> tuple[TrainState, RunReport]:
    """Masked-reconstruction pre-training on the train split."""
    t0 = time.monotonic()
    stage = cfg.pretrain
    if stage.mask_ratio == 0.0:
        warnings.warn(
            "pretrain mask_ratio is 0: reconstruction loss is identically "
            "zero (degenerate config)",
            stacklevel=2,
        )
    manifest, root = load_manifest(cfg)
    entries = [e for e in manifest.entries if e.split == "train"]
    if stage.exclude_winter:
        entries = [e for e in entries if not _is_winter(e)]
    if not entries:
        raise ConfigError("no pre-training samples after filtering")
    dataset = Dataset(manifest, root)
    stats, grouping = fit_normalization(cfg, dataset, manifest)

    arch = cfg.arch()
    n_tokens = cfg.patch.n_tokens(arch.n_vars, arch.height, arch.width)
    opt = cfg.optimizer if stage.lr is None else dataclasses.replace(
        cfg.optimizer, lr=stage.lr
    )
    if resume_from is not None:
        state = resume_from
        steps_per_epoch = (len(entries) + stage.batch - 1) // stage.batch
        start_epoch = state.step_count // steps_per_epoch
    else:
        state = TrainState(TinyNet(arch, cfg.seed), opt, cfg.seed)
        start_epoch = 0
    total_epochs = stage.epochs if epochs is None else epochs

    epoch_losses = []
    for epoch in range(start_epoch, total_epochs):
        losses = []
        for step, idx in enumerate(
            _epoch_batches(
                len(entries), stage.batch, derive_seed(cfg.seed, "pre-shuffle", epoch)
            )
        ):
            batch_entries = [entries[i] for i in idx]
            x, _ = _normalized_batch(dataset, batch_entries, stats, grouping)
            mask = make_mask(
                n_tokens, stage.mask_ratio, derive_seed(cfg.seed, "pre-mask", epoch, step)
            )
            xm = np.stack([apply_mask(s, mask, cfg.patch) for s in x])

            def loss_fn(model, batch):
                xm_, x_ = batch
                pyramid = model.encode(xm_)
                return rec_loss(model.decode_rec(pyramid), x_, mask, cfg.patch)

            losses.append(state.train_step((xm, x), loss_fn))
        epoch_losses.append(float(np.mean(losses)))

    report = RunReport(
        kind="pretrain",
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        epoch_losses=epoch_losses,
        metrics={"final_loss": epoch_losses[-1] if epoch_losses else 0.0},
        wall_clock_s=time.monotonic() - t0,
    )
    if out_path is not None:
        save_checkpoint(state, out_path)
        report.save(Path(out_path).with_suffix(".report.json"))
        plots.loss_curve(
            epoch_losses,
            Path(out_path).with_suffix(".losses.png"),
            "pre-training reconstruction loss",
        )
    return state, report


def _train_manifest_for_finetune(cfg: ExperimentConfig, manifest, root):
    train = DatasetManifest(
        [e for e in manifest.entries if e.split == "train"]
    )
    sampling = cfg.sampling
    if sampling.rainy_fraction is not None:
        rule = RainyDayRule(
            threshold=sampling.rainy_threshold, min_frac=sampling.rainy_min_frac
        )
        train = sample_rainy_days(
            train,
            sampling.rainy_fraction,
            rule,
            root,
            seed=derive_seed(cfg.seed, "rainy-days"),
        )
    if sampling.resample_target is not None:
        train = resample_pixel_ratio(
            train,
            sampling.resample_target,
            sampling.resample_mode,
            root,
            threshold=cfg.label.thresholds[0],
            seed=derive_seed(cfg.seed, "resample"),
        )
    return train


def _targets_for(truths, cfg: ExperimentConfig):
    """Stacked (y, y_star) arrays per the configured labeling kind."""
    kind = cfg.finetune.labeling
    y = np.stack([label_field(t, cfg.label, ONE_HOT).probs for t in truths])
    if kind == "onehot":
        return y, y
    if kind == "pdl":
        y_star = np.stack(
            [label_field(t, cfg.label, DENSITY).probs for t in truths]
        )
        return y, y_star
    # classic uniform label smoothing at strength alpha
    n = cfg.label.n_classes
    y_star = (1.0 - cfg.label.alpha) * y + cfg.label.alpha / n
    return y, y_star


def finetune(
    cfg: ExperimentConfig,
    init: str | Path | TrainState | None = None,
    out_path: str | Path | None = None,
) -> tuple[TrainState, RunReport]:
    """Segmentation fine-tuning; init from a checkpoint or from scratch."""
    t0 = time.monotonic()
    stage = cfg.finetune
    manifest, root = load_manifest(cfg)
    train = _train_manifest_for_finetune(cfg, manifest, root)
    dataset = Dataset(manifest, root)
    # augmented duplicates resolve against the same files
    aug_dataset = Dataset(train, root)
    stats, grouping = fit_normalization(cfg, dataset, manifest)

    arch = cfg.arch()
    opt = cfg.optimizer if stage.lr is None else dataclasses.replace(
        cfg.optimizer, lr=stage.lr
    )
    seed = derive_seed(cfg.seed, "finetune-init")
    state = TrainState(TinyNet(arch, seed), opt, seed)
    init = stage.init if init is None else init
    if isinstance(init, TrainState):
        state.model.copy_encoder_from(init.model)
    elif init not in (None, "scratch"):
        loaded = load_checkpoint(init, arch=arch)
        state.model.copy_encoder_from(loaded.model)
    if stage.freeze_encoder:
        state.freeze(state.model.encoder_param_names())

    n_tokens = cfg.patch.n_tokens(arch.n_vars, arch.height, arch.width)
    entries = train.entries
    epoch_losses = []
    for epoch in range(stage.epochs):
        losses = []
        for step, idx in enumerate(
            _epoch_batches(
                len(entries), stage.batch, derive_seed(cfg.seed, "ft-shuffle", epoch)
            )
        ):
            batch_entries = [entries[i] for i in idx]
            x, truths = _normalized_batch(aug_dataset, batch_entries, stats, grouping)
            y, y_star = _targets_for(truths, cfg)
            mask = make_mask(
                n_tokens, stage.mask_ratio, derive_seed(cfg.seed, "ft-mask", epoch, step)
            )
            xm = np.stack([apply_mask(s, mask, cfg.patch) for s in x])

            def loss_fn(model, batch):
                xm_, y_, ys_ = batch
                logits = model.decode_seg(model.encode(xm_))
                return seg_loss(logits, y_, ys_, cfg.loss)

            losses.append(state.train_step((xm, y, y_star), loss_fn))
        epoch_losses.append(float(np.mean(losses)))

    report = RunReport(
        kind="finetune",
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        epoch_losses=epoch_losses,
        metrics={"final_loss": epoch_losses[-1] if epoch_losses else 0.0},
        wall_clock_s=time.monotonic() - t0,
    )
    if out_path is not None:
        save_checkpoint(state, out_path)
        report.save(Path(out_path).with_suffix(".report.json"))
        plots.loss_curve(
            epoch_losses,
            Path(out_path).with_suffix(".losses.png"),
            "fine-tuning segmentation loss",
        )
    return state, report


def predict_classes(
    state: TrainState, x: np.ndarray
) -> np.ndarray:
    """Unmasked forward pass to per-pixel class indices."""
    logits = state.model.decode_seg(state.model.encode(x))
    return np.argmax(logits.data, axis=1)


def evaluate(
    state: TrainState,
    cfg: ExperimentConfig,
    split: str = "test",
    out_base: str | Path | None = None,
    batch: int = 16,
) -> RunReport:
    """Metric report over one split; never mutates the model."""
    t0 = time.monotonic()
    manifest, root = load_manifest(cfg)
    entries = [e for e in manifest.entries if e.split == split]
    if not entries:
        raise DataError(f"split {split!r} has no samples")
    dataset = Dataset(manifest, root)
    stats, grouping = fit_normalization(cfg, dataset, manifest)

    taus = list(cfg.label.thresholds)
    n_classes = cfg.label.n_classes
    pooled = {t: None for t in taus}
    per_sample = {t: [] for t in taus}
    iou_total = None
    first_panel = None
    for i in range(0, len(entries), batch):
        chunk = entries[i : i + batch]
        x, truths = _normalized_batch(dataset, chunk, stats, grouping)
        pred = predict_classes(state, x)
        for j, truth in enumerate(truths):
            obs_classes = class_field(truth, cfg.label)
            for t in taus:
                table = contingency(pred[j], truth, t, cfg.label)
                pooled[t] = table if pooled[t] is None else merge(pooled[t], table)
                per_sample[t].append(scores(table)["csi"])
            sample_iou = iou_table(pred[j], obs_classes, n_classes)
            iou_total = (
                sample_iou if iou_total is None else merge(iou_total, sample_iou)
            )
            if first_panel is None:
                first_panel = (obs_classes, pred[j])

    threshold_scores = {}
    for t in taus:
        s = scores(pooled[t])
        if cfg.csi_mode == "per_sample":
            s = dict(s, csi=float(np.mean(per_sample[t])))
        threshold_scores[t] = s
    miou_value, per_class = miou_from_table(iou_total)

    metrics = {
        "miou": miou_value,
        "per_class_iou": per_class,
        "thresholds": {str(t): threshold_scores[t] for t in taus},
        "n_samples": len(entries),
    }
    report = RunReport(
        kind="evaluate",
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        metrics=metrics,
        wall_clock_s=time.monotonic() - t0,
    )
    if out_base is not None:
        out_base = Path(out_base)
        write_eval_report(
            out_base, threshold_scores, miou_value, per_class,
            extra={"split": split, "csi_mode": cfg.csi_mode},
        )
        name = out_base.name
        report.save(out_base.parent / (name + ".report.json"))
        plots.score_bars(
            threshold_scores, miou_value, out_base.parent / (name + ".scores.png")
        )
        if first_panel is not None:
            plots.class_panels(
                first_panel[0], first_panel[1],
                out_base.parent / (name + ".sample.png"), n_classes,
            )
    return report


def generate_data(cfg: ExperimentConfig) -> DatasetManifest:
    """Materialize the synthetic dataset named by the config."""
    counts = {
        "train": cfg.data.counts[0],
        "val": cfg.data.counts[1],
        "test": cfg.data.counts[2],
    }
    return gen_dataset(cfg.data.synth, counts, cfg.data.dir)


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------


def _set_by_path(doc: dict, dotted: str, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config path {dotted!r}")
    node[parts[-1]] = value


def run_cell(cfg: ExperimentConfig) -> dict:
    """Full pipeline for one configuration: (pretrain) -> finetune -> eval."""
    if cfg.finetune.init == "pretrained":
        state, _ = pretrain(cfg)
        model, _ = finetune(cfg, init=state)
    else:
        model, _ = finetune(cfg, init="scratch")
    report = evaluate(model, cfg, split="test")
    taus = list(cfg.label.thresholds)
    out = {
        "miou": report.metrics["miou"],
    }
    for t in taus:
        out[f"csi_{t:g}"] = report.metrics["thresholds"][str(t)]["csi"]
    return out


def ablate(
    cfg: ExperimentConfig,
    sweep: dict,
    out_csv: str | Path,
) -> list[dict]:
    """Run a named grid of config overrides; one CSV row per cell.

    Cell seeds derive from hash(base seed, cell params); failures are
    recorded in the row and the harness continues.
    """
    grid = sweep.get("grid")
    if not grid:
        raise ConfigError("sweep must carry a non-empty 'grid' object")
    keys = sorted(grid)
    out_csv = Path(out_csv)
    base_doc = cfg.to_dict()

    rows: list[dict] = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, combo))
        doc = json.loads(json.dumps(base_doc))
        for key, value in cell.items():
            _set_by_path(doc, key, value)
        doc["seed"] = derive_seed(cfg.seed, "ablate", sorted(cell.items()))
        row = dict(cell)
        t0 = time.monotonic()
        try:
            cell_cfg = ExperimentConfig.from_dict(doc)
            row.update(run_cell(cell_cfg))
            row["error"] = ""
        except Exception as exc:  # cell failures must not kill the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["runtime_s"] = round(time.monotonic() - t0, 3)
        rows.append(row)

    metric_names = sorted(
        {k for r in rows for k in r if k not in keys and k not in ("error", "runtime_s")}
    )
    header = keys + metric_names + ["runtime_s", "error"]
    with open(out_csv, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in header})
    plots.ablation_curves(
        rows, keys, out_csv.with_suffix(""),
        metrics=tuple(m for m in metric_names if m != "error"),
    )
    return rows
