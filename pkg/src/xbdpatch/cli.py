"""Command line entry point: ``xbdpatch <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset, labels, metrics, probe, synth
from .errors import DataError
from .patcher import PatchConfig

log = logging.getLogger("xbdpatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--quiet", action="store_true", help="no progress output on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="xbdpatch", description="Building-centred patch pipeline for xBD-style corpora.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", parents=[common], help="class histogram of a corpus")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--include-pre", action="store_true", help="also count *_pre_disaster label files")
    p.add_argument("--out", type=Path, help="write the histogram as JSON here")

    p = sub.add_parser("extract", parents=[common], help="extract building patches and a manifest")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--patch-size", type=int, choices=(224, 518), default=224)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-building", action="store_true", help="one patch for every trainable building")
    p.add_argument("--threshold", type=float, default=0.01, help="maximum accepted empty ratio")
    p.add_argument("--radius", type=int, default=100, help="per-axis search radius in pixels")
    p.add_argument("--max-attempts", type=int, default=50)
    p.add_argument("--offset-shape", choices=("square", "disk"), default="square")
    p.add_argument("--exhaustive-fallback", action="store_true")
    p.add_argument("--passes", type=int, default=1, help="sampling passes over the scenes")
    p.add_argument("--fixed-building", action="store_true", help="same building in every pass")
    p.add_argument("--include-pre", action="store_true", help="sample *_pre_disaster scenes too")

    p = sub.add_parser("split", parents=[common], help="carve a validation split out of the training entries")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", type=Path, help="output manifest (default: rewrite in place)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = sub.add_parser("train-probe", parents=[common], help="train the linear probe")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=probe.FROZEN_LEARNING_RATE)
    p.add_argument("--epochs", type=int, default=probe.FROZEN_EPOCHS)
    p.add_argument("--batch-size", type=int, default=probe.FROZEN_BATCH_SIZE)
    p.add_argument("--devices", type=int, default=1)
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--eval-every", type=int, default=20)
    p.add_argument("--eval-batch-size", type=int, default=64)

    p = sub.add_parser("predict", parents=[common], help="write a predictions file from a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", choices=dataset.SPLITS, default="test")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("eval", parents=[common], help="score one or more prediction files")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--predictions", required=True, type=Path, nargs="+",
                   help="one file per evaluation run; runs are pooled")
    p.add_argument("--out", type=Path, help="write the report as JSON here")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--buildings", type=int, nargs=2, default=(0, 6), metavar=("MIN", "MAX"))
    p.add_argument("--weights", type=float, nargs=4, metavar="W", default=None,
                   help="class weights (default: corpus-wide label proportions)")
    p.add_argument("--unclassified-weight", type=float, default=None)
    p.add_argument("--black-fraction", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _check_dir(path: Path, what: str):
    if not path.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {path}")


def _check_file(path: Path, what: str):
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def cmd_stats(args) -> int:
    _check_dir(args.corpus, "corpus")
    scenes = labels.scan_corpus(args.corpus, include_pre=args.include_pre, threads=args.threads)
    hist = labels.class_histogram(scenes)
    print(labels.format_histogram(hist))
    skipped = sum(s.skipped_features for s in scenes)
    log.info("%d scenes, %.1f%% without trainable buildings, %d unparseable polygons",
             len(scenes), 100 * labels.empty_scene_fraction(scenes), skipped)
    if args.out:
        doc = {"n_scenes": len(scenes), "counts": {c.subtype: n for c, n in hist.items()},
               "total": labels.histogram_total(hist),
               "empty_scene_fraction": labels.empty_scene_fraction(scenes)}
        args.out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_extract(args) -> int:
    _check_dir(args.corpus, "corpus")
    cfg = PatchConfig(patch_size=args.patch_size, search_radius=args.radius, empty_threshold=args.threshold,
                      max_attempts=args.max_attempts, seed=args.seed, offset_shape=args.offset_shape,
                      exhaustive_fallback=args.exhaustive_fallback)
    scenes = labels.scan_corpus(args.corpus, include_pre=args.include_pre, threads=args.threads)
    log.info("extracting from %d scenes", len(scenes))
    stream = dataset.extract_records(scenes, cfg, per_building=args.per_building, passes=args.passes,
                                     fixed_building=args.fixed_building, threads=args.threads,
                                     include_pre=args.include_pre)
    manifest, footer = dataset.emit_shards(stream, args.out, multi_pass=args.passes > 1 and not args.per_building)
    log.info("wrote %d patches to %s (fallback rate %.3f)", footer["n_patches"], manifest, footer["fallback_rate"])
    return EXIT_OK


def cmd_split(args) -> int:
    _check_file(args.manifest, "manifest")
    entries, _ = dataset.read_manifest(args.manifest)
    entries = dataset.assign_validation(entries, dataset.SplitSpec(args.train_fraction, args.seed))
    out = args.out or args.manifest
    if out.resolve().parent != args.manifest.resolve().parent:
        rel = os.path.relpath(args.manifest.resolve().parent, out.resolve().parent)
        entries = [dataclasses.replace(e, path=Path(rel, e.path).as_posix()) for e in entries]
    footer = dataset.write_manifest(entries, out)
    log.info("split counts: %s", footer["split_counts"])
    return EXIT_OK


def cmd_train(args) -> int:
    _check_file(args.manifest, "manifest")
    cfg = probe.TrainConfig(num_epochs=args.epochs, train_batch_size=args.batch_size, num_devices=args.devices,
                            learning_rate=args.lr, weight_decay=args.weight_decay, eval_every=args.eval_every,
                            eval_batch_size=args.eval_batch_size, seed=args.seed)

    def progress(row, head):
        if "eval_accuracy" in row:
            log.info("step %d  loss %.4f  train_acc %.3f  eval_acc %.3f  eval_f1 %.3f", row["step"], row["loss"],
                     row["train_acc_smoothed"], row["eval_accuracy"], row["eval_f1"])

    result = probe.train(cfg, args.manifest, args.out, on_step=progress)
    log.info("%d steps, best epoch %s", len(result.log), result.best_epoch)
    return EXIT_OK


def cmd_predict(args) -> int:
    _check_file(args.checkpoint, "checkpoint")
    _check_file(args.manifest, "manifest")
    n = probe.predict(args.checkpoint, args.manifest, args.split, args.out)
    log.info("wrote %d predictions to %s", n, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    _check_file(args.manifest, "manifest")
    entries, _ = dataset.read_manifest(args.manifest)
    by_id = {e.sample_id: e for e in entries}
    runs = []
    for path in args.predictions:
        _check_file(path, "predictions file")
        records = metrics.ingest_predictions(path, known_ids=by_id)
        for rec in records:
            if rec.label != by_id[rec.sample_id].label:
                raise DataError(f"{path}: label of {rec.sample_id!r} disagrees with the manifest")
        runs.append(metrics.confusion_from_predictions(records))
    rep = metrics.aggregate_runs(runs)
    print(rep.format_table())
    if args.out:
        args.out.write_text(json.dumps(rep.to_dict(), indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    weights = tuple(args.weights) if args.weights else synth.XBD_CLASS_COUNTS
    unclassified = args.unclassified_weight
    if unclassified is None:
        unclassified = 0.0 if args.weights else synth.XBD_UNCLASSIFIED_COUNT
    spec = synth.FixtureSpec(n_scenes=args.scenes, image_size=args.image_size,
                             buildings_per_scene=tuple(args.buildings), class_weights=weights,
                             unclassified_weight=unclassified, black_region_fraction=args.black_fraction,
                             test_fraction=args.test_fraction, seed=args.seed)
    summary = synth.generate(spec, args.out)
    log.info("generated %d scenes with %d buildings in %s", summary["n_scenes"], summary["total"], args.out)
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "extract": cmd_extract,
    "split": cmd_split,
    "train-probe": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("xbdpatch")
    root.handlers[:] = [handler]
    root.propagate = False
    root.setLevel(logging.CRITICAL if args.quiet else logging.INFO)
    if args.threads is not None and args.threads < 1:
        print("xbdpatch: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"xbdpatch: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"xbdpatch: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"xbdpatch: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
