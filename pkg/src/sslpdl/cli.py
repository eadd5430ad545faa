"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure. Precision is selected via SSLPDL_PRECISION=f32|f64
(default f64).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline, plots
from .errors import ConfigError, DataError, NumericError
from .labeling import DENSITY, ONE_HOT, label_field, proportions, write_proportions_report
from .pipeline import ExperimentConfig
from .tinynet import load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_json_file(path)


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    manifest = pipeline.generate_data(cfg)
    print(f"wrote {len(manifest.entries)} samples to {cfg.data.dir}")
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = _load_config(args.config)
    manifest, root = pipeline.load_manifest(cfg)
    entries = [e for e in manifest.entries if e.split == args.split]
    if not entries:
        raise DataError(f"split {args.split!r} has no samples")
    dataset = pipeline.Dataset(manifest, root)
    truths = [dataset.load(e)[1] for e in entries]
    one_hot_fracs = proportions([label_field(t, cfg.label, ONE_HOT) for t in truths])
    density_fracs = proportions([label_field(t, cfg.label, DENSITY) for t in truths])
    out = Path(args.out)
    write_proportions_report(out, one_hot_fracs, density_fracs)
    plots.proportions_bars(one_hot_fracs, density_fracs, out.with_suffix(".png"))
    chosen = density_fracs if args.kind == "pdl" else one_hot_fracs
    for i, frac in enumerate(chosen):
        print(f"class {i} ({args.kind}): {frac:.4%}")
    print(f"report: {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    _, report = pipeline.pretrain(cfg, out_path=args.out)
    print(
        f"pre-trained {len(report.epoch_losses)} epochs, "
        f"final loss {report.metrics['final_loss']:.6f} -> {args.out}"
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    init = args.init
    if init is None:
        init = cfg.finetune.init
    _, report = pipeline.finetune(
        cfg, init="scratch" if init == "scratch" else init, out_path=args.out
    )
    print(
        f"fine-tuned {len(report.epoch_losses)} epochs, "
        f"final loss {report.metrics['final_loss']:.6f} -> {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    state = load_checkpoint(args.model, arch=cfg.arch())
    out_base = args.out or str(Path(args.model).with_suffix("")) + f".{args.split}"
    report = pipeline.evaluate(state, cfg, split=args.split, out_base=out_base)
    for t, s in report.metrics["thresholds"].items():
        print(f"tau={t} mm: CSI={s['csi']:.3f} F1={s['f1']:.3f} "
              f"precision={s['precision']:.3f} recall={s['recall']:.3f}")
    print(f"mIoU={report.metrics['miou']:.3f}  ({report.metrics['n_samples']} samples)")
    print(f"report: {out_base}.csv")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    try:
        sweep = json.loads(Path(args.sweep).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep {args.sweep}: {exc}") from exc
    rows = pipeline.ablate(cfg, sweep, args.out)
    failures = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} cells -> {args.out} ({failures} failed)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sslpdl",
        description="Masked pre-training and density-labeled rainfall "
        "segmentation on synthetic forecasts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("label", help="label proportions report")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=["onehot", "pdl"], default="pdl")
    p.add_argument("--split", default="train")
    p.add_argument("--out", default="proportions.csv")
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.sslc)")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="segmentation fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--init", default=None,
                   help="checkpoint path or 'scratch' (default: config)")
    p.add_argument("--out", required=True, help="model path (.sslc)")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a model on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="report base path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a sweep grid")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
