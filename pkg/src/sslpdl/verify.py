"""Forecast verification: thresholded contingency tables, CSI / F1 /
precision / recall, and per-class IoU. Tables are value objects that
merge by component-wise addition, so per-sample evaluation followed by a
merge equals evaluating the pooled pixels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .labeling import LabelConfig
from .synthgen import RainField


@dataclass(frozen=True)
class ContingencyTable:
    threshold: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ConfigError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassIoUTable:
    n_classes: int
    intersection: tuple[int, ...]
    union: tuple[int, ...]

    def __post_init__(self):
        if (
            len(self.intersection) != self.n_classes
            or len(self.union) != self.n_classes
        ):
            raise ConfigError("per-class counts must match n_classes")
        if any(i > u for i, u in zip(self.intersection, self.union)):
            raise ConfigError("intersection cannot exceed union")

    @classmethod
    def zero(cls, n_classes: int) -> "ClassIoUTable":
        return cls(n_classes, (0,) * n_classes, (0,) * n_classes)


def class_event_lookup(cfg: LabelConfig, tau: float) -> np.ndarray:
    """Per-class flag: class bin lower bound >= tau (event at tau)."""
    lower = np.concatenate([[0.0], np.asarray(cfg.thresholds)])
    return lower >= tau


def contingency(
    pred: np.ndarray,
    obs: RainField,
    tau: float,
    cfg: LabelConfig | None = None,
) -> ContingencyTable:
    """Event counts at threshold tau (event means value >= tau).

    ``pred`` is either a rainfall field (floats, mm) or a class-index
    field (integers); class fields need ``cfg`` with tau among its
    thresholds so classes map onto events.
    """
    pred = np.asarray(pred)
    if pred.shape != obs.values.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {obs.values.shape}")
    if np.issubdtype(pred.dtype, np.integer):
        if cfg is None or not any(
            abs(tau - t) < 1e-12 for t in cfg.thresholds
        ):
            raise ConfigError(
                f"threshold {tau} is not configured; class fields can only "
                "be scored at label thresholds"
            )
        event_pred = class_event_lookup(cfg, tau)[pred]
    else:
        event_pred = pred >= tau
    event_obs = obs.values >= tau
    tp = int(np.count_nonzero(event_pred & event_obs))
    fp = int(np.count_nonzero(event_pred & ~event_obs))
    fn = int(np.count_nonzero(~event_pred & event_obs))
    tn = int(np.count_nonzero(~event_pred & ~event_obs))
    return ContingencyTable(threshold=tau, tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def scores(t: ContingencyTable) -> dict[str, float]:
    """CSI, precision, recall, F1 with the 0/0 -> 0 convention."""
    csi = _ratio(t.tp, t.tp + t.fp + t.fn)
    precision = _ratio(t.tp, t.tp + t.fp)
    recall = _ratio(t.tp, t.tp + t.fn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return {"csi": csi, "precision": precision, "recall": recall, "f1": f1}


def iou_table(
    pred_class: np.ndarray, obs_class: np.ndarray, n_classes: int
) -> ClassIoUTable:
    pred_class = np.asarray(pred_class)
    obs_class = np.asarray(obs_class)
    if pred_class.shape != obs_class.shape:
        raise ConfigError("class fields must share a shape")
    for a in (pred_class, obs_class):
        if a.size and (a.min() < 0 or a.max() >= n_classes):
            raise ConfigError(f"class index outside [0, {n_classes})")
    inter, union = [], []
    for c in range(n_classes):
        p = pred_class == c
        o = obs_class == c
        inter.append(int(np.count_nonzero(p & o)))
        union.append(int(np.count_nonzero(p | o)))
    return ClassIoUTable(n_classes, tuple(inter), tuple(union))


def miou_from_table(
    table: ClassIoUTable, absent: str = "one"
) -> tuple[float, list[float]]:
    """Mean IoU plus per-class IoUs.

    A class absent from both fields contributes IoU = 1 under the
    default convention, or is dropped from the mean with absent="exclude".
    """
    if absent not in ("one", "exclude"):
        raise ConfigError(f"absent policy must be one|exclude, got {absent!r}")
    per_class = []
    included = []
    for i, u in zip(table.intersection, table.union):
        if u == 0:
            per_class.append(1.0)
            if absent == "one":
                included.append(1.0)
        else:
            iou = i / u
            per_class.append(iou)
            included.append(iou)
    mean = float(np.mean(included)) if included else 1.0
    return mean, per_class


def miou(
    pred_class: np.ndarray,
    obs_class: np.ndarray,
    n_classes: int,
    absent: str = "one",
) -> tuple[float, list[float]]:
    return miou_from_table(iou_table(pred_class, obs_class, n_classes), absent)


def merge(a, b):
    """Component-wise sum of two tables of the same kind and key."""
    if isinstance(a, ContingencyTable) and isinstance(b, ContingencyTable):
        if abs(a.threshold - b.threshold) > 1e-12:
            raise ConfigError(
                f"cannot merge tables at thresholds {a.threshold} and {b.threshold}"
            )
        return ContingencyTable(
            a.threshold, a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.tn + b.tn
        )
    if isinstance(a, ClassIoUTable) and isinstance(b, ClassIoUTable):
        if a.n_classes != b.n_classes:
            raise ConfigError("cannot merge IoU tables with different class counts")
        return ClassIoUTable(
            a.n_classes,
            tuple(x + y for x, y in zip(a.intersection, b.intersection)),
            tuple(x + y for x, y in zip(a.union, b.union)),
        )
    raise ConfigError(f"cannot merge {type(a).__name__} with {type(b).__name__}")


def write_eval_report(
    base_path: str | Path,
    threshold_scores: dict[float, dict[str, float]],
    miou_value: float,
    per_class_iou: list[float] | None = None,
    extra: dict | None = None,
) -> tuple[Path, Path]:
    """Write the metric report as CSV plus a JSON mirror.

    Returns (csv_path, json_path). The CSV carries one row per threshold
    with columns (threshold, csi, f1, precision, recall) and a final
    `miou` row with its value in the second column.
    """
    base = Path(base_path)
    csv_path = base.parent / (base.name + ".csv")
    json_path = base.parent / (base.name + ".json")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "csi", "f1", "precision", "recall"])
        for tau in sorted(threshold_scores):
            s = threshold_scores[tau]
            writer.writerow(
                [tau, f"{s['csi']:.6f}", f"{s['f1']:.6f}",
                 f"{s['precision']:.6f}", f"{s['recall']:.6f}"]
            )
        writer.writerow(["miou", f"{miou_value:.6f}", "", "", ""])
    doc = {
        "thresholds": {str(t): threshold_scores[t] for t in sorted(threshold_scores)},
        "miou": miou_value,
    }
    if per_class_iou is not None:
        doc["per_class_iou"] = per_class_iou
    if extra:
        doc.update(extra)
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return csv_path, json_path
