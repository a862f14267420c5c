"""``mammocnn`` command line: prepare, split, roi, augment, train, eval, saliency, report."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import CLASSES, MALIGNANT, __version__

log = logging.getLogger("mammocnn")

DATA_ROOT_ENV = "MAMMOCNN_DATA_ROOT"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ISO_DATE = "%Y-%m-%dT%H:%M:%S%z"


class CLIError(Exception):
    pass


def _ratios(text: str):
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated fractions")
    return vals


def _attach_log_file(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, ISO_DATE))
    logging.getLogger("mammocnn").addHandler(handler)
    return handler


# ---------------------------------------------------------------- subcommands

def cmd_prepare(args):
    from .dataset import load_layout, scan_dataset, write_manifest
    root = args.root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise CLIError(f"--root not given and {DATA_ROOT_ENV} is unset")
    manifest = scan_dataset(root, load_layout(args.layout), workers=args.workers)
    write_manifest(manifest, args.out)
    print(f"{len(manifest)} records from {len(manifest.patients())} patients -> {args.out}")


def cmd_split(args):
    from .dataset import read_manifest, split_by_patient, write_split
    split = split_by_patient(read_manifest(args.manifest), args.ratios, args.seed)
    write_split(split, args.out)
    print(f"train {len(split.train)} / val {len(split.val)} / test {len(split.test)} -> {args.out}")


def cmd_roi(args):
    from .dataset import read_manifest, read_split
    from .imageio import read_raster
    from .patches import write_patch_dir
    from .roi import ContextStrategy, record_patch

    manifest = read_manifest(args.manifest)
    wanted = set(read_split(args.split).assignment()) if args.split else None
    strategy = ContextStrategy.from_name(args.strategy, args.pad, args.scale)

    def patches():
        for rec in manifest.records:
            if wanted is not None and rec.record_id not in wanted:
                continue
            yield record_patch(read_raster(rec.image_path), read_raster(rec.mask_path), strategy,
                               args.size, rec.record_id)

    out = write_patch_dir(patches(), args.out)
    print(f"patches -> {out}")


def cmd_augment(args):
    from .augment import AugmentationSpec, augment_offline
    from .dataset import read_manifest, read_split
    from .patches import load_roi_patches, write_augmented_dir
    from .roi import ContextStrategy, ROIPatch

    labels = {r.record_id: r.label for r in read_manifest(args.manifest).records}
    spec = AugmentationSpec(args.rotations, args.crops, (args.rotation_min, args.rotation_max),
                            (args.crop_min, args.crop_max), args.seed)
    pixels = load_roi_patches(args.patches)
    ids = sorted(pixels)
    if args.split:
        train_ids = set(read_split(args.split).train)
        ids = [rid for rid in ids if rid in train_ids]
    first = True
    n = 0
    for rid in ids:
        patch = ROIPatch(pixels[rid], rid, ContextStrategy(), source_box=None)
        items = augment_offline(patch, labels[rid], spec)
        write_augmented_dir(items, args.out, header=first)
        first = False
        n += len(items)
    if first:
        raise CLIError("no patches to augment")
    print(f"{n} augmented items from {len(ids)} records -> {args.out}")


def _labels_from(manifest_path) -> dict[str, str]:
    from .dataset import read_manifest
    if not manifest_path:
        raise CLIError("a dataset manifest is needed for labels (--manifest or 'manifest' in the config)")
    return {r.record_id: r.label for r in read_manifest(manifest_path).records}


def build_items(cfg, labels, split):
    """(train items, val items) for a resolved run config."""
    from .ablation import augmented
    from .patches import augmented_set, patch_set
    if not cfg.patches:
        raise CLIError("no patch directory (--patches or 'patches' in the config)")
    val = patch_set(cfg.patches, split.val, labels) if split.val else None
    if cfg.augment and cfg.augmented:
        train_items = augmented_set(cfg.augmented, parents=split.train)
    elif cfg.augment:
        train_items = augmented(patch_set(cfg.patches, split.train, labels), cfg.context,
                                cfg.augmentation_spec())
    else:
        train_items = patch_set(cfg.patches, split.train, labels)
    return train_items, val


def cmd_train(args):
    from .config import load_config
    from .dataset import read_split
    from .models import build_network, model_summary
    from .train import train

    cfg = load_config(args.config).with_paths(split=args.split, patches=args.patches, manifest=args.manifest,
                                              augmented=args.augmented, pretrained_path=args.pretrained)
    if not cfg.split:
        raise CLIError("no split file (--split or 'split' in the config)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = _attach_log_file(out / "log.txt")
    try:
        log.info("run %s fingerprint %s", cfg.name, cfg.fingerprint)
        (out / "config.snapshot").write_text(cfg.to_text(), encoding="utf-8")
        split = read_split(cfg.split)
        labels = _labels_from(cfg.manifest)
        train_items, val_items = build_items(cfg, labels, split)
        model_cfg = cfg.model_config()
        net = build_network(model_cfg)
        log.info("init: loaded %s; fresh %s", net.init_report["loaded"] or "none", net.init_report["fresh"])
        train_cfg = cfg.train_config()
        (out / "model_summary.txt").write_text(model_summary(net, train_cfg.multiplier_scheme), encoding="utf-8")
        best, curve, last = train(net, train_items, val_items, train_cfg, fingerprint=cfg.fingerprint,
                                  model_config=model_cfg)
        curve.write(out)
        best.save(out / "checkpoints" / "best")
        last.save(out / "checkpoints" / "last")
        log.info("best epoch %d val_acc %s", best.epoch, best.val_accuracy)
    finally:
        logging.getLogger("mammocnn").removeHandler(handler)
        handler.close()
    print(f"best epoch {best.epoch} val_acc {best.val_accuracy} -> {out}")


def _run_dir_of(checkpoint: Path) -> Path | None:
    cand = checkpoint.resolve().parent.parent
    return cand if (cand / "config.snapshot").is_file() else None


def _snapshot_value(checkpoint: Path, key: str) -> str:
    from .config import load_config
    run_dir = _run_dir_of(checkpoint)
    return getattr(load_config(run_dir / "config.snapshot"), key) if run_dir else ""


def cmd_eval(args):
    from .dataset import read_split
    from .evaluation import compute_metrics, predict, write_predictions
    from .patches import patch_set
    from .train import Checkpoint

    ckpt_path = Path(args.checkpoint)
    ckpt = Checkpoint.load(ckpt_path)
    labels = _labels_from(args.manifest or _snapshot_value(ckpt_path, "manifest"))
    ids = getattr(read_split(args.split), args.subset)
    if not ids:
        raise CLIError(f"split has no {args.subset} records")
    items = patch_set(args.patches, ids, labels)
    preds = predict(ckpt.network(), items)
    report = compute_metrics([CLASSES[y] for y in items.labels], [p for _, p, _ in preds])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_dir = _run_dir_of(ckpt_path)
    model = run_dir.name if run_dir else ckpt_path.stem
    out.write_text(report.to_text(model=model, epochs=ckpt.epoch, subset=args.subset,
                                  config_fingerprint=ckpt.config_fingerprint), encoding="utf-8")
    write_predictions(out.parent / "predictions.csv", items, preds)
    print(f"accuracy {report.accuracy:.4f} -> {out}")


def cmd_saliency(args):
    from .patches import load_roi_patches
    from .saliency import render_panel, saliency_map
    from .train import Checkpoint

    net = Checkpoint.load(args.checkpoint).network()
    pixels = load_roi_patches(args.patches)
    ids = [r for r in args.records.split(",") if r]
    missing = [r for r in ids if r not in pixels]
    if missing:
        raise CLIError(f"no patches for {missing}")
    cls = {"pred": None, "benign": 0, "malignant": 1}[args.cls]
    maps = [saliency_map(net, pixels[r], cls) for r in ids]
    titles = [f"{r}\n{CLASSES[m.class_index].lower()}" for r, m in zip(ids, maps)]
    render_panel([pixels[r] for r in ids], maps, args.out, titles)
    print(f"{len(ids)} saliency maps -> {args.out}")


def cmd_report(args):
    from .evaluation import format_table, load_run_report, reference_table3
    rows = []
    if args.reference:
        rows += [(name, report, extra.get("epochs", "-")) for name, (report, extra) in reference_table3().items()]
    rows += [load_run_report(r) for r in args.runs]
    if not rows:
        raise CLIError("nothing to report (give --runs and/or --reference)")
    table = format_table(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mammocnn", description=__doc__)
    p.add_argument("--version", action="version", version=f"mammocnn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("prepare", help="scan a corpus directory into a manifest CSV")
    s.add_argument("--root", help=f"corpus directory (default: ${DATA_ROOT_ENV})")
    s.add_argument("--layout", default="ddsm", help="layout preset name or key=value file with patterns")
    s.add_argument("--workers", type=int, default=4, help="parallel file checks")
    s.add_argument("--out", required=True, help="manifest CSV to write")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("split", help="patient-disjoint split with balanced val/test")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1), help="train,val,test fractions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="split CSV (a .meta sidecar is written next to it)")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("roi", help="extract context patches for every record in a split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", help="restrict to records in this split file")
    s.add_argument("--strategy", choices=("small", "large"), default="large")
    s.add_argument("--pad", type=int, default=50, help="fixed padding (small context)")
    s.add_argument("--scale", type=float, default=2.0, help="box scale (large context)")
    s.add_argument("--size", type=int, default=224, help="patch side in pixels")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_roi)

    s = sub.add_parser("augment", help="materialise rotations x crops for training patches")
    s.add_argument("--patches", required=True, help="directory written by 'roi'")
    s.add_argument("--manifest", required=True, help="dataset manifest (labels)")
    s.add_argument("--split", help="only augment this split's training records")
    s.add_argument("--rotations", type=int, default=5)
    s.add_argument("--crops", type=int, default=5, help="crops per rotation")
    s.add_argument("--rotation-min", type=float, default=0.0)
    s.add_argument("--rotation-max", type=float, default=360.0)
    s.add_argument("--crop-min", type=float, default=0.8, help="smallest crop side fraction")
    s.add_argument("--crop-max", type=float, default=1.0, help="largest crop side fraction")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a network from a run config")
    s.add_argument("--config", required=True, help="flat key = value run config")
    s.add_argument("--split", help="split CSV (overrides the config)")
    s.add_argument("--patches", help="patch directory (overrides the config)")
    s.add_argument("--manifest", help="dataset manifest for labels (overrides the config)")
    s.add_argument("--augmented", help="pre-augmented directory from 'augment'")
    s.add_argument("--pretrained", help="backbone weight archive (overrides the config)")
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics of a checkpoint on one split subset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--patches", required=True)
    s.add_argument("--manifest", help="dataset manifest (default: the run's config snapshot)")
    s.add_argument("--subset", choices=("test", "val", "train"), default="test")
    s.add_argument("--out", required=True, help="metrics file; predictions.csv lands beside it")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("saliency", help="render input-gradient saliency maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--records", required=True, help="comma-separated record ids")
    s.add_argument("--patches", required=True)
    s.add_argument("--class", dest="cls", choices=("pred", "benign", "malignant"), default="pred")
    s.add_argument("--out", required=True, help="panel image (PNG)")
    s.set_defaults(func=cmd_saliency)

    s = sub.add_parser("report", help="aggregate metrics files into a comparison table")
    s.add_argument("--runs", nargs="*", default=[], help="run directories or metrics files")
    s.add_argument("--reference", action="store_true", help="include the published test-set rows")
    s.add_argument("--out", help="also write the table here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.getLogger("mammocnn").setLevel(logging.INFO)
    if args.verbose:
        h = logging.StreamHandler()
        h.setFormatter(logging.Formatter(LOG_FORMAT, ISO_DATE))
        logging.getLogger("mammocnn").addHandler(h)
    try:
        args.func(args)
    except Exception as exc:  # one machine-parseable line, no traceback
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
