"""Stratified splitting, Adam, the training loop, evaluation and SNR sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from digitrec.audio import read_wav
from digitrec.augment import NoiseCategory, mix_noise_at_snr, synth_noise
from digitrec.data import Manifest
from digitrec.errors import NonFiniteLoss, ShapeMismatch, TooFewSamples
from digitrec.features import MfccConfig, clip_features
from digitrec.model import ModelConfig, init_model, logits, predict_batch
from digitrec.nn.functional import softmax_cross_entropy
from digitrec.nn.tensor import Tensor
from digitrec.rng import derive_rng

log = logging.getLogger(__name__)

N_CLASSES = 10


@dataclass
class Hyperparams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 25
    seed: int = 0
    split_ratios: tuple = (0.8, 0.1, 0.1)
    dtype: str = "float64"

    def __post_init__(self):
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        r = np.array(self.split_ratios)
        if r.shape != (3,) or np.any(r <= 0) or abs(r.sum() - 1.0) > 1e-9:
            raise ValueError(f"split_ratios must be three positive numbers summing to 1, got {self.split_ratios}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")


# --------------------------------------------------------------------------
# splitting


def _allocate(n, ratios):
    exact = np.asarray(ratios) * n
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    # every split gets at least one group when there are enough to go round
    if n >= len(ratios):
        for i in range(len(counts)):
            if counts[i] == 0:
                counts[np.argmax(counts)] -= 1
                counts[i] += 1
    return counts


def stratified_split(manifest: Manifest, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Per-class shuffled split into (train, val, test) manifests.

    The unit of assignment is the source utterance, so augmented copies always
    land in the same split as their original.
    """
    groups = defaultdict(lambda: defaultdict(list))
    for e in manifest.entries:
        groups[e.label][e.source_id].append(e)
    out = {"train": [], "val": [], "test": []}
    for label in sorted(groups):
        sources = sorted(groups[label])
        if len(sources) < 3:
            raise TooFewSamples(f"class {label} has {len(sources)} source utterances, need >= 3")
        order = derive_rng(seed, "split", label).permutation(len(sources))
        counts = _allocate(len(sources), ratios)
        bounds = np.cumsum(counts)
        for rank, idx in enumerate(order):
            split = ("train", "val", "test")[int(np.searchsorted(bounds, rank, side="right"))]
            out[split].extend(e.with_split(split) for e in groups[label][sources[idx]])
    return tuple(Manifest(out[s], manifest.root) for s in ("train", "val", "test"))


def assign_splits(manifest: Manifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Manifest:
    """``manifest`` in its original order with the ``split`` field filled in."""
    lookup = {}
    for part in stratified_split(manifest, ratios, seed):
        for e in part.entries:
            lookup[e.path] = e.split
    return Manifest([e.with_split(lookup[e.path]) for e in manifest.entries], manifest.root)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, hyper: Hyperparams, t: int) -> None:
    """One bias-corrected Adam update, in place, for step index ``t`` (>= 1)."""
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)).astype(p.dtype, copy=False)
    state.t = t


# --------------------------------------------------------------------------
# datasets and metrics


@dataclass
class FeatureSet:
    """Model-ready inputs (N, 1, coeffs, frames) with integer labels."""

    x: np.ndarray
    y: np.ndarray
    source_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ShapeMismatch(f"{len(self.x)} inputs vs {len(self.y)} labels")


def featurize(manifest: Manifest, model_cfg: ModelConfig = ModelConfig(),
              mfcc_cfg: MfccConfig = MfccConfig(), dtype=np.float64) -> FeatureSet:
    x = np.zeros((len(manifest), 1, model_cfg.in_coeffs, model_cfg.in_frames), dtype=dtype)
    for i, e in enumerate(manifest.entries):
        clip = read_wav(manifest.resolve(e))
        x[i] = clip_features(clip, mfcc_cfg, model_cfg.in_frames, model_cfg.in_coeffs)
    return FeatureSet(x, manifest.labels(), [e.source_id for e in manifest.entries])


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, cols: predicted

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes=N_CLASSES):
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([str(c) for c in range(self.counts.shape[1])])
        w.writerows(self.counts.tolist())
        return buf.getvalue()


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    test_acc: Optional[float] = None
    best_epoch: Optional[int] = None
    seed: int = 0
    config: dict = field(default_factory=dict)
    # excluded from equality so identical runs compare equal
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_s")
        return d

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for m in self.epochs:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.train_acc), repr(m.val_loss), repr(m.val_acc)])
        return buf.getvalue()

    def write(self, run_dir) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "report.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        (run_dir / "epochs.csv").write_text(self.epochs_csv())
        (run_dir / "timing.json").write_text(json.dumps({"wall_clock_s": self.wall_clock_s}))


def _param_dtype(params):
    return next(iter(params.values())).dtype


def loss_and_accuracy(params, cfg: ModelConfig, data: FeatureSet, batch_size=128):
    probs = predict_batch(params, cfg, data.x, batch_size)
    p_true = probs[np.arange(len(data)), data.y]
    loss = float(-np.mean(np.log(np.maximum(p_true, 1e-300))))
    acc = float(np.mean(np.argmax(probs, axis=1) == data.y))
    return loss, acc


def evaluate(params, cfg: ModelConfig, data: FeatureSet, batch_size=128):
    """Eval-mode accuracy and confusion matrix."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    probs = predict_batch(params, cfg, data.x, batch_size)
    cm = ConfusionMatrix.from_predictions(data.y, np.argmax(probs, axis=1), cfg.n_classes)
    return cm.accuracy, cm


def snapshot(params):
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def train_step(params, cfg, xb, yb, rng):
    out = logits(params, cfg, Tensor(xb), training=True, rng=rng)
    loss, _ = softmax_cross_entropy(out, yb)
    for p in params.values():
        p.grad = None
    loss.backward()
    return float(loss.data)


def train(cfg: ModelConfig, train_set: FeatureSet, val_set: FeatureSet, hyper: Hyperparams,
          params: Optional[dict] = None, test_set: Optional[FeatureSet] = None,
          on_epoch: Optional[Callable] = None, stop_when: Optional[Callable] = None):
    """Minibatch Adam training.

    Returns the parameters from the epoch with the best validation accuracy
    (ties go to the later epoch) and the per-epoch report. ``stop_when(m)``
    may end training early after an epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    dtype = np.dtype(hyper.dtype)
    if params is None:
        params = init_model(cfg, derive_rng(hyper.seed, "init"), dtype=dtype)
    x_train = train_set.x.astype(dtype, copy=False)
    val = FeatureSet(val_set.x.astype(dtype, copy=False), val_set.y)
    train_eval = FeatureSet(x_train, train_set.y)
    state = AdamState()
    report = TrainReport(seed=hyper.seed)
    best, best_acc = None, -1.0
    start = time.perf_counter()
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = derive_rng(hyper.seed, "shuffle", epoch).permutation(len(train_set))
        for b, lo in enumerate(range(0, len(order), hyper.batch_size)):
            idx = order[lo : lo + hyper.batch_size]
            loss = train_step(params, cfg, x_train[idx], train_set.y[idx],
                              derive_rng(hyper.seed, "dropout", epoch, b))
            if not np.isfinite(loss):
                raise NonFiniteLoss(b, epoch)
            step += 1
            adam_step({k: p.data for k, p in params.items()},
                      {k: p.grad for k, p in params.items()}, state, hyper, step)
        tr_loss, tr_acc = loss_and_accuracy(params, cfg, train_eval)
        va_loss, va_acc = loss_and_accuracy(params, cfg, val)
        m = EpochMetrics(epoch, tr_loss, tr_acc, va_loss, va_acc)
        report.epochs.append(m)
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f",
                 epoch, tr_loss, tr_acc, va_loss, va_acc)
        if va_acc >= best_acc:
            best, best_acc, report.best_epoch = snapshot(params), va_acc, epoch
        if on_epoch is not None:
            on_epoch(m)
        if stop_when is not None and stop_when(m):
            break
    if test_set is not None:
        report.test_acc = evaluate(best, cfg, FeatureSet(test_set.x.astype(dtype, copy=False), test_set.y))[0]
    report.wall_clock_s = time.perf_counter() - start
    return best, report


# --------------------------------------------------------------------------
# noise robustness


@dataclass
class SweepResult:
    rows: list  # (category, snr_db, accuracy)

    def accuracy(self, category, snr_db) -> float:
        for c, s, a in self.rows:
            if c == NoiseCategory(category).value and s == float(snr_db):
                return a
        raise KeyError((category, snr_db))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "snr_db", "accuracy"])
        for c, s, a in self.rows:
            w.writerow([c, repr(s), repr(a)])
        return buf.getvalue()


def snr_sweep(params, cfg: ModelConfig, clips, labels, categories, snr_levels, seed: int = 0,
              mfcc_cfg: MfccConfig = MfccConfig()) -> SweepResult:
    """Accuracy on ``clips`` with fresh synthetic noise mixed in at each SNR.

    Each (category, level) cell draws its noise from its own seeded stream.
    """
    if not clips:
        raise ValueError("snr_sweep needs at least one clean clip")
    labels = np.asarray(labels, dtype=np.int64)
    dtype = _param_dtype(params)
    rows = []
    for cat in categories:
        cat = NoiseCategory(cat)
        for level in snr_levels:
            rng = derive_rng(seed, "sweep", cat.value, float(level))
            x = np.zeros((len(clips), 1, cfg.in_coeffs, cfg.in_frames), dtype=dtype)
            for i, clip in enumerate(clips):
                noise = synth_noise(cat, clip.duration, clip.rate, rng)
                noisy = mix_noise_at_snr(clip, noise, float(level))
                x[i] = clip_features(noisy, mfcc_cfg, cfg.in_frames, cfg.in_coeffs)
            pred = np.argmax(predict_batch(params, cfg, x), axis=1)
            rows.append((cat.value, float(level), float(np.mean(pred == labels))))
    return SweepResult(rows)
