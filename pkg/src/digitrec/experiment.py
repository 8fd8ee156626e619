"""The desk-scale pipeline: synthesize, augment, split, featurize, train, sweep."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from digitrec.audio import read_wav
from digitrec.augment import NoiseCategory, expand_dataset
from digitrec.config import RunConfig, save_config
from digitrec.data import Manifest, save_manifest, synth_digit_dataset
from digitrec.errors import TooFewSamples
from digitrec.model import save_checkpoint
from digitrec.training import (
    ConfusionMatrix,
    SweepResult,
    TrainReport,
    assign_splits,
    evaluate,
    featurize,
    snr_sweep,
    train,
)

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    report: TrainReport
    confusion: ConfusionMatrix
    sweep: SweepResult
    n_entries: dict  # split -> number of clips
    timings: dict  # stage -> seconds

    @property
    def best_val_acc(self) -> float:
        return max(m.val_acc for m in self.report.epochs)

    def summary(self) -> dict:
        return {
            "best_epoch": self.report.best_epoch,
            "best_val_acc": self.best_val_acc,
            "test_acc": self.report.test_acc,
            "n_entries": self.n_entries,
            "timings_s": self.timings,
            "sweep": [list(r) for r in self.sweep.rows],
        }


def checkpoint_meta(cfg: RunConfig, report: TrainReport) -> dict:
    return {"seed": cfg.train.seed, "split_ratios": list(cfg.train.split_ratios),
            "best_epoch": report.best_epoch, "test_acc": report.test_acc, "mfcc": asdict(cfg.mfcc)}


def train_on_manifest(cfg: RunConfig, manifest: Manifest, on_epoch: Optional[Callable] = None, timings=None):
    """Featurize the train/val/test splits of ``manifest`` and train on them.

    Entries without a split are assigned one first. Returns
    ``(params, report, confusion, parts)`` with the confusion matrix on test.
    """
    timings = {} if timings is None else timings
    if any(e.split is None for e in manifest.entries):
        manifest = assign_splits(manifest, cfg.train.split_ratios, cfg.train.seed)
    parts = {s: manifest.subset(s) for s in ("train", "val", "test")}
    for s, m in parts.items():
        if len(m) == 0:
            raise TooFewSamples(f"the {s} split is empty")
    dtype = np.dtype(cfg.train.dtype)
    t0 = time.perf_counter()
    feats = {s: featurize(m, cfg.model, cfg.mfcc, dtype) for s, m in parts.items()}
    timings["featurize"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    params, report = train(cfg.model, feats["train"], feats["val"], cfg.train,
                           test_set=feats["test"], on_epoch=on_epoch)
    timings["train"] = time.perf_counter() - t0
    report.config = cfg.to_json()
    _, confusion = evaluate(params, cfg.model, feats["test"])
    return params, report, confusion, parts


def write_run(run_dir, cfg: RunConfig, params, report: TrainReport, confusion: ConfusionMatrix) -> None:
    """Checkpoint (``model.json`` + ``params.bin``), reports and confusion matrix."""
    run = Path(run_dir)
    save_checkpoint(run, params, cfg.model, checkpoint_meta(cfg, report))
    report.write(run)
    save_config(run / "config.json", cfg)
    (run / "confusion.csv").write_text(confusion.to_csv())


def run_experiment(cfg: RunConfig, work_dir, on_epoch: Optional[Callable] = None) -> ExperimentResult:
    """Run the whole pipeline under ``work_dir`` and write every artifact there.

    Layout: ``raw/`` synthetic originals, ``expanded/`` augmented corpus with
    ``manifest.jsonl``, ``run/`` checkpoint, reports and the SNR sweep.
    """
    work = Path(work_dir)
    seed = cfg.train.seed
    timings = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[name] = time.perf_counter() - t0
        log.info("%s done in %.1fs", name, timings[name])
        return out

    raw = stage("synth", lambda: synth_digit_dataset(cfg.data.n_per_class, cfg.data.rate, seed, work / "raw"))
    expanded = stage("augment", lambda: expand_dataset(raw, cfg.augment, cfg.data.expand_factor,
                                                       work / "expanded", seed))
    manifest = assign_splits(expanded, cfg.train.split_ratios, seed)
    save_manifest(work / "expanded" / "manifest.jsonl", manifest)

    params, report, confusion, parts = train_on_manifest(cfg, manifest, on_epoch, timings)

    # robustness is measured on clean originals of the held-out split
    originals = parts["test"].originals()
    clips = [read_wav(originals.resolve(e)) for e in originals.entries]
    sweep = stage("sweep", lambda: snr_sweep(params, cfg.model, clips, originals.labels(), list(NoiseCategory),
                                             cfg.augment.snr_levels, seed, cfg.mfcc))

    run = work / "run"
    write_run(run, cfg, params, report, confusion)
    (run / "snr_sweep.csv").write_text(sweep.to_csv())
    result = ExperimentResult(report, confusion, sweep, {s: len(m) for s, m in parts.items()}, timings)
    (run / "summary.json").write_text(json.dumps(result.summary(), indent=2))
    return result


def overfit_run(work_dir, model_cfg=None, n_per_class: int = 5, max_epochs: int = 300, seed: int = 0,
                rate: int = 16000, dtype: str = "float32"):
    """Train on a handful of clean clips until every one is classified correctly.

    Validation uses the training clips themselves. Returns the TrainReport;
    ``len(report.epochs)`` is the number of epochs it took (or ``max_epochs``).
    """
    from digitrec.config import DESK_MODEL
    from digitrec.training import Hyperparams

    model_cfg = DESK_MODEL if model_cfg is None else model_cfg
    manifest = synth_digit_dataset(n_per_class, rate, seed, Path(work_dir))
    data = featurize(manifest, model_cfg, dtype=np.dtype(dtype))
    hyper = Hyperparams(epochs=max_epochs, seed=seed, dtype=dtype)
    _, report = train(model_cfg, data, data, hyper, stop_when=lambda m: m.train_acc == 1.0)
    return report
