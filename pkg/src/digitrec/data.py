"""Dataset manifests (JSONL), directory ingestion and a synthetic digit corpus."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from digitrec.audio import AudioClip, write_wav
from digitrec.augment import AugmentationSpec
from digitrec.errors import IoFailure, NoFilesFound, ParseError, UnlabeledFile
from digitrec.rng import derive_rng

SPLITS = ("train", "val", "test")
_FIELDS = ("path", "label", "source_id", "augmentation", "split")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    source_id: str
    augmentation: Optional[AugmentationSpec] = None
    split: Optional[str] = None

    def __post_init__(self):
        if not 0 <= int(self.label) <= 9:
            raise ValueError(f"label must be a digit 0-9, got {self.label}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def to_json(self) -> dict:
        return {
            "path": self.path,
            "label": int(self.label),
            "source_id": self.source_id,
            "augmentation": None if self.augmentation is None else self.augmentation.to_json(),
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        missing = [k for k in _FIELDS if k not in d]
        if missing:
            raise ValueError(f"missing fields {missing}")
        extra = sorted(set(d) - set(_FIELDS))
        if extra:
            raise ValueError(f"unknown fields {extra}")
        aug = d["augmentation"]
        label = d["label"]
        if isinstance(label, bool) or not isinstance(label, int):
            raise ValueError(f"label must be an integer, got {label!r}")
        return cls(
            path=str(d["path"]),
            label=label,
            source_id=str(d["source_id"]),
            augmentation=None if aug is None else AugmentationSpec.from_json(aug),
            split=d["split"],
        )

    def with_split(self, split) -> "ManifestEntry":
        return ManifestEntry(self.path, self.label, self.source_id, self.augmentation, split)


@dataclass
class Manifest:
    """Ordered entries; paths are relative to ``root``."""

    entries: list = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        self.root = Path(self.root)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, Manifest) and self.entries == other.entries

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels(), minlength=10)

    def subset(self, split: str) -> "Manifest":
        return Manifest([e for e in self.entries if e.split == split], self.root)

    def originals(self) -> "Manifest":
        return Manifest([e for e in self.entries if e.augmentation is None], self.root)

    def validate(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate path {e.path}")
            seen.add(e.path)
            if not self.resolve(e).is_file():
                raise IoFailure(f"missing file {self.resolve(e)}")


def save_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for e in manifest.entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def load_manifest(path, root=None) -> Manifest:
    """Load a JSONL manifest. Paths resolve against ``root`` (default: the file's directory)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(lineno, str(exc)) from exc
    return Manifest(entries, path.parent if root is None else root)


_PREFIX = re.compile(r"^(\d)(?:[_\-\s.]|$)")


def _label_for(rel: Path, label_rule: str):
    if label_rule in ("folder", "parent-folder-name"):
        name = rel.parent.name
        return int(name) if re.fullmatch(r"\d", name) else None
    if label_rule in ("prefix", "filename-prefix"):
        m = _PREFIX.match(rel.stem)
        return int(m.group(1)) if m else None
    raise ValueError(f"unknown label rule {label_rule!r}")


def scan_directory(directory, label_rule: str = "folder") -> Manifest:
    """Find every ``.wav`` below ``directory`` and label it by folder name or filename prefix."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NoFilesFound(f"{directory} is not a directory")
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() == ".wav")
    if not files:
        raise NoFilesFound(f"no .wav files under {directory}")
    entries, unlabeled = [], []
    for f in files:
        rel = f.relative_to(directory)
        label = _label_for(rel, label_rule)
        if label is None:
            unlabeled.append(rel)
            continue
        entries.append(ManifestEntry(rel.as_posix(), label, rel.with_suffix("").as_posix()))
    if unlabeled:
        raise UnlabeledFile(unlabeled)
    return Manifest(entries, directory)


# --------------------------------------------------------------------------
# synthetic corpus

# Each digit is a short "word": a phone sequence built from five well-separated
# vowels plus fricatives (s, f), a stop (t) and a nasal (n). Classes differ in
# phonetic content rather than by a few percent of formant frequency, so speed
# perturbation and room colouring leave the label recoverable, as with speech.
# Two minimal pairs (2/4 and 3/6) differ only in a weak initial consonant, the
# kind of near-homophone that noise masks first.
VOWELS = {"a": (750.0, 1200.0), "e": (500.0, 1850.0), "i": (300.0, 2300.0),
          "o": (500.0, 900.0), "u": (320.0, 800.0)}
F3_HZ = 2600.0
DIGIT_WORDS = ("s i o", "u a n", "t o", "f i", "f o", "f a i", "s i", "s e n", "e i t", "n a i n")
_PHONE_MS = {"vowel": 130.0, "s": 100.0, "f": 90.0, "t": 60.0, "n": 80.0}


@dataclass(frozen=True)
class Speaker:
    f0: float = 120.0  # mean pitch, Hz
    scale: float = 1.0  # vocal-tract scaling of every resonance
    tempo: float = 1.0  # duration multiplier

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Speaker":
        return cls(rng.uniform(90.0, 220.0), rng.uniform(0.9, 1.1), rng.uniform(0.8, 1.2))


def _resonator(x, freq, bandwidth, rate):
    """Two-pole resonator centred on ``freq`` (Hz)."""
    r = np.exp(-np.pi * bandwidth / rate)
    theta = 2 * np.pi * freq / rate
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _pulse_train(n, f0, rate):
    """Glottal pulses with a pitch falling from 1.1*f0 to 0.9*f0."""
    phase = np.cumsum(np.linspace(1.1 * f0, 0.9 * f0, n) / rate)
    pulses = np.zeros(n)
    pulses[np.flatnonzero(np.diff(np.floor(phase), prepend=0.0))] = 1.0
    return pulses


def _rms_normalize(x, level):
    rms = np.sqrt(np.mean(x * x))
    return x * (level / rms) if rms > 0 else x


def _phone(phone, pulses, rate, scale, rng):
    n = len(pulses)
    nyq = 0.45 * rate
    if phone in VOWELS:
        f1, f2 = VOWELS[phone]
        y = pulses
        for f, bw in ((f1, 90.0), (f2, 120.0), (F3_HZ, 200.0)):
            y = _resonator(y, min(f * scale, nyq), bw, rate)
        return _rms_normalize(y, 1.0)
    if phone == "n":
        y = _resonator(pulses, 250.0 * scale, 60.0, rate) + 0.1 * _resonator(pulses, 2200.0 * scale, 150.0, rate)
        return _rms_normalize(y, 0.4)
    noise = rng.standard_normal(n)
    if phone == "s":
        return _rms_normalize(_resonator(noise, min(4000.0 * scale, nyq), 1200.0, rate), 0.35)
    if phone == "f":
        return _rms_normalize(_resonator(noise, min(1800.0 * scale, nyq), 3000.0, rate), 0.15)
    if phone == "t":
        y = np.zeros(n)
        burst = n // 3
        y[-burst:] = _rms_normalize(_resonator(noise[:burst], min(3000.0 * scale, nyq), 2000.0, rate), 0.5)
        return y
    raise ValueError(f"unknown phone {phone!r}")


def synth_word(phones: str, rate: int, rng: np.random.Generator, speaker: Speaker = Speaker()) -> AudioClip:
    """Render a space-separated phone string as one utterance."""
    names = phones.split()
    unknown = [p for p in names if p not in VOWELS and p not in _PHONE_MS]
    if unknown or not names:
        raise ValueError(f"unknown phones {unknown} in {phones!r}")
    lengths = [int(round(_PHONE_MS["vowel" if p in VOWELS else p] * 1e-3 * rate * speaker.tempo
                         * rng.uniform(0.85, 1.15))) for p in names]
    pulses = _pulse_train(sum(lengths), speaker.f0, rate)
    ramp = int(0.005 * rate)
    segments, start = [], 0
    for p, n in zip(names, lengths):
        seg = _phone(p, pulses[start:start + n], rate, speaker.scale, rng)
        if ramp and n > 2 * ramp:
            seg[:ramp] *= np.linspace(0.0, 1.0, ramp)
            seg[-ramp:] *= np.linspace(1.0, 0.0, ramp)
        segments.append(seg)
        start += n
    y = np.concatenate(segments)
    amp = 0.5 * rng.uniform(0.9, 1.1)
    return AudioClip(amp * y / np.max(np.abs(y)), rate)


def synth_digit(label: int, rate: int, rng: np.random.Generator) -> AudioClip:
    """One token of ``label`` spoken by a randomly drawn speaker."""
    return synth_word(DIGIT_WORDS[label], rate, rng, Speaker.random(rng))


def synth_digit_dataset(n_per_class: int, rate: int, seed: int, out_dir) -> Manifest:
    """Write ``n_per_class`` synthetic tokens per digit plus ``manifest.jsonl``."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    out_dir = Path(out_dir)
    entries = []
    for label in range(10):
        for i in range(n_per_class):
            clip = synth_digit(label, rate, derive_rng(seed, "synth", label, i))
            rel = f"{label}/{label}_{i:04d}.wav"
            write_wav(out_dir / rel, clip)
            entries.append(ManifestEntry(rel, label, f"{label}_{i:04d}"))
    manifest = Manifest(entries, out_dir)
    save_manifest(out_dir / "manifest.jsonl", manifest)
    return manifest
