"""Command-line entry point.

Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from digitrec.audio import read_wav, resample
from digitrec.augment import NoiseCategory, expand_dataset
from digitrec.config import RunConfig, desk_config, load_config
from digitrec.data import load_manifest, save_manifest, synth_digit_dataset
from digitrec.errors import DigitRecError
from digitrec.experiment import train_on_manifest, write_run
from digitrec.features import MfccConfig, add_deltas, mfcc, write_feature_file
from digitrec.model import load_checkpoint, predict
from digitrec.training import FeatureSet, assign_splits, evaluate, featurize, snr_sweep

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here that code means bad data."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else desk_config()
    overrides = {}
    for flag, key in (("epochs", "train.epochs"), ("seed", "train.seed"), ("batch_size", "train.batch_size"),
                      ("lr", "train.lr"), ("dtype", "train.dtype")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return cfg.with_overrides(overrides) if overrides else cfg


def _mfcc_from_meta(meta) -> MfccConfig:
    return MfccConfig(**meta["mfcc"]) if "mfcc" in meta else MfccConfig()


def _select_split(manifest, split, meta):
    """Entries of ``split``; unsplit manifests are split as training did."""
    if split == "all":
        return manifest
    if any(e.split is None for e in manifest.entries):
        if "seed" not in meta or "split_ratios" not in meta:
            raise UsageError("manifest has no splits and the checkpoint does not record how to derive them")
        manifest = assign_splits(manifest, meta["split_ratios"], meta["seed"])
    return manifest.subset(split)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    m = synth_digit_dataset(args.per_class, args.rate, args.seed, args.out)
    print(f"wrote {len(m)} clips to {args.out}")


def cmd_augment(args):
    policy = load_config(args.policy).augment if args.policy else RunConfig().augment
    m = expand_dataset(load_manifest(args.manifest), policy, args.factor, args.out, args.seed)
    save_manifest(Path(args.out) / "manifest.jsonl", m)
    print(f"wrote {len(m)} entries to {args.out}")


def cmd_featurize(args):
    cfg = load_config(args.config).mfcc if args.config else MfccConfig()
    m = load_manifest(args.manifest)
    out = Path(args.out)
    for e in m.entries:
        clip = read_wav(m.resolve(e))
        if clip.rate != cfg.rate:
            clip = resample(clip, cfg.rate)
        write_feature_file(out / Path(e.path).with_suffix(".mfcc"), add_deltas(mfcc(clip, cfg)))
    print(f"wrote {len(m)} feature files to {out}")


def cmd_train(args):
    cfg = _run_config(args)
    params, report, confusion, _ = train_on_manifest(cfg, load_manifest(args.manifest))
    write_run(args.out, cfg, params, report, confusion)
    best = report.epochs[report.best_epoch - 1]
    print(f"best epoch {report.best_epoch}: val acc {best.val_acc:.4f}, test acc {report.test_acc:.4f}")


def cmd_evaluate(args):
    params, cfg, meta = load_checkpoint(args.checkpoint)
    m = _select_split(load_manifest(args.manifest), args.split, meta)
    if len(m) == 0:
        raise UsageError(f"no entries in split {args.split!r}")
    data = featurize(m, cfg, _mfcc_from_meta(meta), next(iter(params.values())).dtype)
    acc, cm = evaluate(params, cfg, FeatureSet(data.x, data.y))
    if args.confusion:
        Path(args.confusion).write_text(cm.to_csv())
    print(f"accuracy={acc!r} n={cm.total}")


def cmd_predict(args):
    params, cfg, meta = load_checkpoint(args.checkpoint)
    mfcc_cfg = _mfcc_from_meta(meta)
    for path in args.files:
        digit, probs = predict(params, cfg, read_wav(path), mfcc_cfg)
        line = f"digit={digit} probs=[{', '.join(f'{p:.6f}' for p in probs)}]"
        print(line if len(args.files) == 1 else f"{path} {line}")


def cmd_sweep(args):
    params, cfg, meta = load_checkpoint(args.checkpoint)
    m = _select_split(load_manifest(args.manifest), args.split, meta).originals()
    if len(m) == 0:
        raise UsageError(f"no clean originals in split {args.split!r}")
    clips = [read_wav(m.resolve(e)) for e in m.entries]
    cats = [NoiseCategory(c) for c in args.categories.split(",")]
    result = snr_sweep(params, cfg, clips, m.labels(), cats, args.snr, args.seed, _mfcc_from_meta(meta))
    out = Path(args.out) if args.out else Path(args.checkpoint) / "snr_sweep.csv"
    out.write_text(result.to_csv())
    print(result.to_csv(), end="")


def build_parser():
    p = _Parser(prog="digitrec", description="Spoken digit recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic digit corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--rate", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("augment", help="expand a manifest with augmented copies")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--factor", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", help="run config JSON whose augment section is used")
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("featurize", help="dump MFCC+delta feature files")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_featurize)

    s = sub.add_parser("train", help="train and write a run directory")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="run config JSON (default: the desk config)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--dtype", choices=["float32", "float64"])
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", help="accuracy of a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--confusion", help="write the confusion matrix CSV here")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("predict", help="classify WAV files")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("files", nargs="+")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("sweep", help="accuracy under synthetic noise at several SNRs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--snr", type=_float_list, default=[0.0, 5.0, 10.0, 15.0, 20.0])
    s.add_argument("--categories", default=",".join(c.value for c in NoiseCategory))
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (default: CHECKPOINT/snr_sweep.csv)")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"digitrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DigitRecError, OSError) as exc:
        print(f"digitrec {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # bad category names, bad config values and similar
        print(f"digitrec {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
