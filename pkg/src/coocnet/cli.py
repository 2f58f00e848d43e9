"""``coocnet`` command line: corpus generation through fused evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
Each run prints its resolved configuration as JSON on stderr and stores the
same JSON next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .cooccurrence import NORMALIZATIONS, SUM_TO_ONE
from .errors import CoocError, DataError, DivergenceError
from .evaluation import auc, fuse, fusion_table, per_type_report, read_scores, write_scores
from .image_io import DatasetManifest, ManifestEntry, read_manifest, split_manifest, write_manifest
from .nn import load_checkpoint
from .nn.checkpoint import save_checkpoint
from .synth import generate_corpus, load_recipe, write_source_images
from .training import TrainConfig, extract_to_cache, predict_path, score_manifest, train

log = logging.getLogger("coocnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")
DIRECTIONS = {"both": "both", "horizontal": "horizontal_only", "vertical": "vertical_only"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _echo(args, out_path=None):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    text = json.dumps(cfg, indent=2, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out_path is not None:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    return cfg


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".config.json")


def cmd_make_sources(args):
    out = Path(args.out)
    write_source_images(out, args.count, seed=args.seed, size=(args.size, args.size))
    _echo(args, out / "config.json")
    return EXIT_OK


def _source_manifest(src: Path) -> DatasetManifest:
    if src.is_file():
        return read_manifest(src)
    if not src.is_dir():
        raise DataError(f"source path {src} does not exist")
    if (src / "manifest.jsonl").is_file():
        return read_manifest(src / "manifest.jsonl")
    files = sorted(p.name for p in src.iterdir() if p.suffix.lower() in IMAGE_EXTS)
    if not files:
        raise DataError(f"no images found in {src}")
    return DatasetManifest(tuple(ManifestEntry(f, 0) for f in files), src)


def cmd_gen_corpus(args):
    recipe = load_recipe(args.recipe)
    sources = _source_manifest(Path(args.sources))
    out = Path(args.out)
    manifest = generate_corpus(sources, recipe, out, seed=args.seed, threads=args.threads)
    if args.train_fraction is not None:
        manifest = split_manifest(manifest, args.train_fraction, seed=args.seed)
        write_manifest(manifest, out / "manifest.jsonl")
    _echo(args, out / "config.json")
    n_t = sum(e.label for e in manifest)
    log.info("wrote %d untampered + %d tampered images to %s", len(manifest) - n_t, n_t, out)
    return EXIT_OK


def cmd_extract(args):
    manifest = read_manifest(args.manifest)
    n = len(manifest)
    step = max(1, n // 10)

    def progress(k, entry):
        if (k + 1) % step == 0 or k + 1 == n:
            log.info("extracted %d/%d", k + 1, n)

    out = Path(args.out)
    extract_to_cache(manifest, out, args.bins, args.normalization, DIRECTIONS[args.direction],
                     threads=args.threads, progress=progress)
    _echo(args, out / "config.json")
    return EXIT_OK


def cmd_train(args):
    manifest = read_manifest(args.manifest)
    if not manifest.subset("val").entries:
        manifest = split_manifest(manifest, args.train_fraction, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.cnet"
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, direction_mode=DIRECTIONS[args.direction],
        bins=args.bins, normalization=args.normalization, seed=args.seed, lr=args.lr,
        dtype=args.dtype, checkpoint_path=str(ckpt),
        cache_dir=args.cache_dir or str(out / "cache"), threads=args.threads,
    )
    cfg = _echo(args, out / "config.json")
    model, train_log = train(manifest, config)
    model.metadata["cli_config"] = cfg
    save_checkpoint(model, ckpt)
    train_log.to_csv(out / "train_log.csv")
    best = train_log.record(train_log.best_epoch)
    log.info("best epoch %d: val loss %.4f, val acc %.3f", best.epoch, best.val_loss, best.val_accuracy)
    return EXIT_OK


def cmd_predict(args):
    model = load_checkpoint(args.model)
    if args.image:
        for path in args.image:
            print(f"{path}\t{predict_path(model, path):.6f}")
        _echo(args)
        return EXIT_OK
    if not args.manifest or not args.out:
        raise UsageError("predict needs --image, or --manifest together with --out")
    manifest = read_manifest(args.manifest)
    if args.split != "all":
        manifest = manifest.subset(args.split)
        if not manifest.entries:
            raise DataError(f"manifest has no {args.split!r} entries")
    scored = score_manifest(model, manifest, cache_dir=args.cache_dir, threads=args.threads)
    write_scores(scored, args.out)
    _echo(args, _sidecar(args.out))
    return EXIT_OK


def cmd_eval(args):
    scored = read_scores(args.scores)
    report = per_type_report(scored)
    cfg = _echo(args)
    print(report.to_text())
    if args.out:
        body = {"config": cfg, **report.to_dict()}
        Path(args.out).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        Path(args.out).with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_fuse(args):
    if len(args.scores) < 2:
        raise UsageError("fuse needs at least two --scores files")
    names = args.names or [Path(p).stem for p in args.scores]
    if len(names) != len(args.scores):
        raise UsageError("--names needs one name per --scores file")
    sets = [read_scores(p) for p in args.scores]
    fused = fuse(sets)
    write_scores(fused, args.out)
    cfg = _echo(args, _sidecar(args.out))
    if len(set(fused.labels.tolist())) == 2:
        rows = {name: auc(s) for name, s in zip(names, sets)}
        rows["fusion"] = auc(fused)
        table = fusion_table(rows)
        print(table)
        Path(args.out).with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
        Path(args.out).with_suffix(".json").write_text(
            json.dumps({"config": cfg, "auc": rows}, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults; explicit flags take precedence")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="coocnet", description="Co-occurrence based tamper detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-sources", parents=[common], help="synthesise untampered source images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_make_sources)

    p = sub.add_parser("gen-corpus", parents=[common], help="apply a manipulation recipe to source images")
    p.add_argument("--sources", required=True, help="directory of images, or a manifest file")
    p.add_argument("--recipe", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=None,
                   help="also assign a stratified train/val split")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("extract", parents=[common], help="cache co-occurrence tensors for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--normalization", choices=NORMALIZATIONS, default=SUM_TO_ONE)
    p.add_argument("--direction", choices=tuple(DIRECTIONS), default="both")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for model.cnet, train_log.csv, config.json")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--normalization", choices=NORMALIZATIONS, default=SUM_TO_ONE)
    p.add_argument("--direction", choices=tuple(DIRECTIONS), default="both")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--train-fraction", type=float, default=0.9,
                   help="used only when the manifest has no val entries")
    p.add_argument("--cache-dir", default=None, help="tensor cache (default: <out>/cache)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score images with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--image", nargs="+")
    p.add_argument("--out", help="scored-set CSV")
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="AUC report with per-manipulation breakdown")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", help="JSON report path (a .txt table is written beside it)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", parents=[common], help="average the scores of several models")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            parser.error(f"cannot load config {args.config}: {exc}")
        if not isinstance(defaults, dict):
            parser.error(f"config {args.config} must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(k.replace("-", "_") for k in defaults) - known)
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"coocnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"coocnet {args.command}: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CoocError, OSError, ValueError) as exc:
        print(f"coocnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
