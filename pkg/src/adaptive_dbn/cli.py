"""Command-line interface: ``adaptive-dbn <command> ...``.

Exit codes
    0  success
    2  invalid configuration or arguments, or refusing to overwrite without --force
    3  dataset problem (missing root, no images, undecodable file, unwritable output)
    4  numeric blow-up during training (the last finished layer is kept on disk)
    5  checkpoint unreadable, wrong version, or preprocessing mismatch
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import shutil
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import VERSION, Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .dataset import (LabeledDataset, apply_relabels, generate_synthetic, load_cache,
                      load_image, load_sdnet, read_relabels, sanitize_source, save_cache,
                      save_pixels_png, task_structures, write_sdnet_tree)
from .dbn import evaluate, fine_tune, format_table, predict, train_adaptive
from .errors import CheckpointError, ConfigError, DatasetError, NumericError
from .fileio import atomic_write

log = logging.getLogger("adaptive_dbn")

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4, 5

METRICS_SCHEMA = 1
METRICS_COLUMNS = ["row_type", "layer", "epoch", "reconstruction_error", "mean_energy", "wd_total",
                   "hidden_count", "event", "neurons"]

TRAIN_OUTPUTS = ("config.json", "metrics.csv", "checkpoint.json", "structure.txt", "report.txt",
                 "report.json")


class Refused(Exception):
    """An output exists and --force was not given."""


# --- data --------------------------------------------------------------------

def load_datasets(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset, list[str]]:
    """Train and test sets for a run plus any loader warnings."""
    d, p = config.data, config.preprocessing
    if d.source == "synthetic":
        s = d.synthetic
        structures = task_structures(config.task)
        train = generate_synthetic(s.n_train, s.crack_fraction, p.target_side, s.seed, structures, config.task)
        test = generate_synthetic(s.n_test, s.crack_fraction, p.target_side, s.seed + 1, structures, config.task)
        return train, test, []

    cache_paths = None
    if d.cache:
        stem = f"{config.task}-{p.target_side}-{p.grayscale}"
        cache_paths = [Path(d.cache) / f"{stem}-{split}.npz" for split in ("train", "test")]
        cached = [load_cache(path, p) for path in cache_paths]
        if all(c is not None for c in cached):
            return cached[0], cached[1], []
    train, test, manifest = load_sdnet(d.root, config.task, p, d.folder_codes)
    if cache_paths:
        cache_paths[0].parent.mkdir(parents=True, exist_ok=True)
        save_cache(train, cache_paths[0])
        save_cache(test, cache_paths[1])
    return train, test, manifest.warnings


def _dataset_for_checkpoint(checkpoint: Checkpoint, args) -> tuple[LabeledDataset, LabeledDataset]:
    """Resolve the data an evaluate/export command should use."""
    if args.data:
        train, test, _ = load_sdnet(args.data, checkpoint.config.get("task", "deck"), checkpoint.descriptor)
        return train, test
    if args.config:
        config = load_config(args.config)
    elif checkpoint.config:
        config = RunConfig.from_dict(checkpoint.config)
    else:
        raise ConfigError("--config", "checkpoint has no config echo; pass --config or --data")
    if config.preprocessing != checkpoint.descriptor:
        raise CheckpointError(f"preprocessing mismatch: checkpoint {checkpoint.descriptor.to_dict()}, "
                              f"config {config.preprocessing.to_dict()}")
    train, test, _ = load_datasets(config)
    return train, test


def _pick_split(train: LabeledDataset, test: LabeledDataset, split: str) -> LabeledDataset:
    data = train if split == "train" else test
    if len(data) == 0:
        raise DatasetError(f"the {split} split is empty")
    return data


# --- output helpers ----------------------------------------------------------

def metrics_csv(history, events) -> str:
    rows = []
    for r in history:
        rows.append(((r.layer, r.epoch, 0), ["epoch", r.layer, r.epoch, repr(r.reconstruction_error),
                                             repr(r.mean_energy), repr(r.wd_total), r.hidden_count, "", ""]))
    for e in events:
        # a new layer is announced right after the last epoch of the one below it
        key = (e.layer - 1, e.epoch, 2) if e.event == "layer" else (e.layer, e.epoch, 1)
        rows.append((key, ["event", e.layer, e.epoch, "", "", "", e.hidden_count, e.event,
                           " ".join(str(j) for j in e.neurons)]))
    rows.sort(key=lambda item: item[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    writer.writerows(row for _, row in rows)
    return buf.getvalue()


def structure_summary(checkpoint: Checkpoint) -> str:
    m = checkpoint.model
    lines = [
        f"checkpoint version: {VERSION}",
        f"layers: {len(m.layers)}",
        f"neurons per layer: {', '.join(str(j) for j in m.hidden_sizes)}",
        f"input dim: {m.input_dim} ({checkpoint.descriptor.target_side}x{checkpoint.descriptor.target_side}, "
        f"{checkpoint.descriptor.grayscale})",
        f"classes: {', '.join(m.label_names)}",
        f"override table: {len(m.overrides)} patterns",
        f"structural events: {len(checkpoint.events)}",
    ]
    for e in checkpoint.events:
        detail = f" neurons {e.neurons}" if e.neurons else ""
        lines.append(f"  layer {e.layer} epoch {e.epoch}: {e.event}{detail} -> {e.hidden_count} hidden")
    return "\n".join(lines) + "\n"


def _check_outputs(out_dir: Path, names, force: bool) -> None:
    if force:
        return
    existing = [n for n in names if (out_dir / n).exists()]
    if existing:
        raise Refused(f"{out_dir / existing[0]} exists (use --force to overwrite)")


# --- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    config = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out_dir = args.out
    if args.fine_tune:
        config.fine_tune = True
    if args.relabels:
        config.relabels = args.relabels
    config.validate()
    out = Path(config.out_dir)
    _check_outputs(out, TRAIN_OUTPUTS, args.force)

    train, test, warnings = load_datasets(config)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if len(train) == 0:
        raise DatasetError("the training split is empty")
    if config.relabels:
        train, changed = apply_relabels(train, read_relabels(config.relabels))
        print(f"relabels: {changed} training labels changed")

    atomic_write(out / "config.json", config.to_json())
    echo = json.loads(config.to_json())
    last_good = out / "checkpoint-last-good.json"

    def keep_layer(model):
        save_checkpoint(Checkpoint(model, config.preprocessing, echo), last_good)

    def log_epoch(r):
        log.info("layer %d epoch %d: recon %.6f energy %.3f wd %.4f hidden %d", r.layer, r.epoch,
                 r.reconstruction_error, r.mean_energy, r.wd_total, r.hidden_count)

    rng = np.random.default_rng(config.seed)
    try:
        run = train_adaptive(train, config.structure, rng, on_layer=keep_layer, on_epoch=log_epoch)
    except NumericError as exc:
        where = f"; last finished layer kept in {last_good}" if last_good.exists() else ""
        raise NumericError(f"{exc}{where}") from None

    model = run.model
    metrics = {"metrics_schema": METRICS_SCHEMA, "hidden_sizes": model.hidden_sizes,
               "layer_wd": run.layer_stats.wd, "layer_energy": run.layer_stats.energy}
    if config.fine_tune:
        model, report = fine_tune(model, train)
        metrics["fine_tune"] = asdict(report)
    train_report = evaluate(model, train, config.fine_tune)
    test_report = evaluate(model, test, config.fine_tune) if len(test) else None
    metrics.update({
        "train_accuracy": train_report.accuracy, "train_misclassified": train_report.incorrect,
        "test_accuracy": test_report.accuracy if test_report else None,
        "test_misclassified": test_report.incorrect if test_report else None,
    })
    checkpoint = Checkpoint(model, config.preprocessing, echo, run.events, metrics)

    atomic_write(out / "metrics.csv", metrics_csv(run.history, run.events))
    save_checkpoint(checkpoint, out / "checkpoint.json")
    atomic_write(out / "structure.txt", structure_summary(checkpoint))
    table = format_table(test_report, train_report) if test_report else format_table(train_report)
    atomic_write(out / "report.txt", table)
    atomic_write(out / "report.json", json.dumps(
        {"train": train_report.to_dict(), "test": test_report.to_dict() if test_report else None}, indent=2) + "\n")
    last_good.unlink(missing_ok=True)
    print(structure_summary(checkpoint), end="")
    print(table, end="")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    train, test = _dataset_for_checkpoint(checkpoint, args)
    reports = {}
    for split in (("train", "test") if args.split == "both" else (args.split,)):
        reports[split] = evaluate(checkpoint.model, _pick_split(train, test, split), args.fine_tune)
    table = format_table(reports.get("test", reports.get("train")), reports.get("train") if "test" in reports else None)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        _check_outputs(out, ("evaluation.txt", "evaluation.json"), args.force)
        atomic_write(out / "evaluation.txt", table)
        atomic_write(out / "evaluation.json",
                     json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2) + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    x = load_image(args.image, checkpoint.descriptor)
    pred = predict(checkpoint.model, x[None, :], args.fine_tune)
    names = checkpoint.model.label_names
    label = int(pred.labels[0])
    print(f"label: {names[label]}")
    print("probabilities: " + ", ".join(f"{n}={p:.6f}" for n, p in zip(names, pred.probabilities[0])))
    print(f"override fired: {'yes' if pred.override_fired[0] else 'no'}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(structure_summary(load_checkpoint(args.checkpoint)), end="")
    return EXIT_OK


def export_misclassified(model, data: LabeledDataset, out_dir, use_fine_tune: bool = False) -> int:
    """Write every misclassified sample under ``<true>__predicted-<label>/``.

    Also writes ``audit.csv`` (one row per exported sample) and
    ``relabels.csv``, prefilled with the annotated labels, which ``train
    --relabels`` accepts after an expert has edited it. Returns the count.
    """
    out = Path(out_dir)
    pred = predict(model, data.X, use_fine_tune)
    names = model.label_names
    wrong = np.flatnonzero(pred.labels != data.labels)
    audit = io.StringIO()
    relabels = io.StringIO()
    audit_writer = csv.writer(audit, lineterminator="\n")
    relabel_writer = csv.writer(relabels, lineterminator="\n")
    audit_writer.writerow(["source", "exported_path", "true_label", "predicted_label", "probability",
                           "override_fired"])
    relabel_writer.writerow(["source", "label"])
    side = data.descriptor.target_side
    for n, i in enumerate(wrong):
        true, guess = names[data.labels[i]], names[pred.labels[i]]
        folder = out / f"{true}__predicted-{guess}"
        folder.mkdir(parents=True, exist_ok=True)
        source = data.sources[i]
        original = Path(source)
        if not source.startswith("synthetic:") and original.is_file():
            target = folder / f"{n:05d}_{original.name}"
            shutil.copy2(original, target)
        else:
            target = folder / f"{n:05d}_{sanitize_source(source)}.png"
            save_pixels_png(data.X[i], side, target)
        audit_writer.writerow([source, str(target.relative_to(out)), true, guess,
                               repr(float(pred.probabilities[i, pred.labels[i]])), int(pred.override_fired[i])])
        relabel_writer.writerow([source, true])
    atomic_write(out / "audit.csv", audit.getvalue())
    atomic_write(out / "relabels.csv", relabels.getvalue())
    return len(wrong)


def cmd_export(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    train, test = _dataset_for_checkpoint(checkpoint, args)
    data = _pick_split(train, test, args.split)
    out = Path(args.out)
    _check_outputs(out, ("audit.csv", "relabels.csv"), args.force)
    if args.force and out.is_dir():
        for stale in out.glob("*__predicted-*"):
            shutil.rmtree(stale)
    try:
        out.mkdir(parents=True, exist_ok=True)
        count = export_misclassified(checkpoint.model, data, out, args.fine_tune)
    except OSError as exc:
        raise DatasetError(f"cannot write to {out}: {exc}") from None
    print(f"exported {count} misclassified {args.split} samples to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise Refused(f"{out} is not empty (use --force to overwrite)")
    if args.force and out.exists():
        for split in ("train", "test"):
            shutil.rmtree(out / split, ignore_errors=True)
    try:
        structures = task_structures(args.task)
        seed = 0 if args.seed is None else args.seed
        train = generate_synthetic(args.n, args.crack_fraction, args.side, seed, structures, args.task)
        test = generate_synthetic(args.n_test, args.crack_fraction, args.side, seed + 1, structures, args.task)
    except ValueError as exc:
        raise ConfigError("synth", str(exc)) from None
    try:
        write_sdnet_tree(train, out, "train")
        write_sdnet_tree(test, out, "test")
    except OSError as exc:
        raise DatasetError(f"cannot write to {out}: {exc}") from None
    print(f"wrote {len(train)} train and {len(test)} test images to {out}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-dbn", description=__doc__.split("\n")[0],
                                     epilog=__doc__.split("\n", 1)[1],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", help="run config (JSON); defaults apply to missing fields")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the config out_dir")
    p.add_argument("--fine-tune", action="store_true", help="apply the pattern override table after training")
    p.add_argument("--relabels", help="CSV of source,label overrides for the training set")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_train)

    def data_args(q):
        q.add_argument("checkpoint")
        q.add_argument("--config", help="run config to take the dataset from (default: the checkpoint's)")
        q.add_argument("--data", help="SDNET-style image tree to evaluate instead")
        q.add_argument("--fine-tune", action="store_true", help="consult the override table")

    p = sub.add_parser("evaluate", help="accuracy tables for a checkpoint")
    data_args(p)
    p.add_argument("--split", choices=("train", "test", "both"), default="both")
    p.add_argument("--out", help="also write evaluation.txt and evaluation.json here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image file")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--fine-tune", action="store_true", help="consult the override table")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="print the learned structure")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("export-misclassified", help="export misclassified samples for audit")
    data_args(p)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth", help="write a synthetic crack dataset as an SDNET-style tree")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000, help="training images")
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--crack-fraction", type=float, default=0.5)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--task", default="deck", choices=("deck", "wall", "pavement", "all", "six_class"))
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Refused as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
