"""Probabilistic audio augmentation: noise at a target SNR, speed
perturbation, reverb and hall impulse responses, and dataset expansion."""

from __future__ import annotations

import enum
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.signal import lfilter

from digitrec.audio import (
    AudioClip,
    CUTOFF_FRACTION,
    convolve_full,
    mean_power,
    read_wav,
    resample_by_step,
    write_wav,
)
from digitrec.errors import (
    DigitRecError,
    RateMismatch,
    SilentClean,
    SilentNoise,
    TransformError,
)
from digitrec.rng import derive_rng

# ln(1000): amplitude decay of 60 dB
RT60_DECAY = 6.9078

NOISE_RMS = 0.1

REVERB_RT60 = (0.2, 0.6)
HALL_RT60 = (1.0, 2.5)


class NoiseCategory(str, enum.Enum):
    HORN = "horn"
    NATURE = "nature"
    VEHICLE = "vehicle"
    HUM = "hum"
    FACTORY = "factory"


class Kind(str, enum.Enum):
    NOISE = "noise"
    SPEED = "speed"
    REVERB = "reverb"
    HALL = "hall"


@dataclass(frozen=True)
class Noise:
    category: NoiseCategory
    snr_db: float
    kind = Kind.NOISE


@dataclass(frozen=True)
class Speed:
    factor: float
    kind = Kind.SPEED


@dataclass(frozen=True)
class Reverb:
    rt60_s: float
    kind = Kind.REVERB


@dataclass(frozen=True)
class Hall:
    rt60_s: float
    kind = Kind.HALL


Transform = Union[Noise, Speed, Reverb, Hall]


@dataclass(frozen=True)
class AugmentationSpec:
    """One sampled transform plus the seed that drives its own randomness."""

    transform: Transform
    seed: int

    @property
    def kind(self) -> Kind:
        return self.transform.kind

    def to_json(self) -> dict:
        t = self.transform
        out = {"kind": t.kind.value}
        if isinstance(t, Noise):
            out.update(category=t.category.value, snr_db=t.snr_db)
        elif isinstance(t, Speed):
            out.update(factor=t.factor)
        else:
            out.update(rt60_s=t.rt60_s)
        out["seed"] = self.seed
        return out

    @classmethod
    def from_json(cls, d: dict) -> "AugmentationSpec":
        kind = Kind(d["kind"])
        if kind is Kind.NOISE:
            t = Noise(NoiseCategory(d["category"]), float(d["snr_db"]))
        elif kind is Kind.SPEED:
            t = Speed(float(d["factor"]))
        elif kind is Kind.REVERB:
            t = Reverb(float(d["rt60_s"]))
        else:
            t = Hall(float(d["rt60_s"]))
        return cls(t, int(d["seed"]))


@dataclass
class AugmentationPolicy:
    p_noise: float = 0.70
    p_speed: float = 0.15
    p_reverb: float = 0.075
    p_hall: float = 0.075
    snr_levels: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    speed_range: tuple = (0.9, 1.1)
    noise_categories: list = field(default_factory=lambda: list(NoiseCategory))

    def __post_init__(self):
        self.noise_categories = [NoiseCategory(c) for c in self.noise_categories]
        self.snr_levels = [float(s) for s in self.snr_levels]
        self.speed_range = tuple(float(s) for s in self.speed_range)
        self.validate()

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_noise, self.p_speed, self.p_reverb, self.p_hall])

    def validate(self):
        p = self.probabilities
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"augmentation probabilities must be >= 0 and sum to 1, got {p.tolist()}")
        if not self.snr_levels:
            raise ValueError("snr_levels must not be empty")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid speed_range {self.speed_range}")
        if self.p_noise > 0 and not self.noise_categories:
            raise ValueError("noise_categories must not be empty when p_noise > 0")


_KINDS = (Kind.NOISE, Kind.SPEED, Kind.REVERB, Kind.HALL)


def sample_spec(policy: AugmentationPolicy, rng: np.random.Generator) -> AugmentationSpec:
    """Draw one transform from the policy's categorical distribution."""
    kind = _KINDS[rng.choice(4, p=policy.probabilities)]
    if kind is Kind.NOISE:
        category = policy.noise_categories[rng.integers(len(policy.noise_categories))]
        snr = policy.snr_levels[rng.integers(len(policy.snr_levels))]
        t = Noise(category, snr)
    elif kind is Kind.SPEED:
        t = Speed(float(rng.uniform(*policy.speed_range)))
    elif kind is Kind.REVERB:
        t = Reverb(float(rng.uniform(*REVERB_RT60)))
    else:
        t = Hall(float(rng.uniform(*HALL_RT60)))
    return AugmentationSpec(t, int(rng.integers(2**31)))


# --------------------------------------------------------------------------
# transforms


def noise_gain(p_clean: float, p_noise: float, snr_db: float) -> float:
    return math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))


def tile(noise, n: int, offset: int = 0) -> np.ndarray:
    """``n`` samples of ``noise`` starting at ``offset``, wrapping around."""
    return np.take(np.asarray(noise), np.arange(offset, offset + n), mode="wrap")


def mix_noise_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, offset: int = 0) -> AudioClip:
    """Add ``noise`` scaled so that the clean-to-noise power ratio is ``snr_db``.

    Noise shorter than ``clean`` (or any ``offset``) is tiled. No clamping.
    """
    if clean.rate != noise.rate:
        raise RateMismatch(f"clean at {clean.rate} Hz, noise at {noise.rate} Hz")
    if len(noise) == 0:
        raise SilentNoise("empty noise clip")
    segment = tile(noise.samples, len(clean), offset)
    p_clean = mean_power(clean.samples)
    p_noise = mean_power(segment)
    if p_clean == 0.0:
        raise SilentClean("clean signal has zero power")
    if p_noise == 0.0:
        raise SilentNoise("noise has zero power over the mixed span")
    g = noise_gain(p_clean, p_noise, snr_db)
    return clean.with_samples(clean.samples + g * segment)


def change_speed(clip: AudioClip, factor: float) -> AudioClip:
    """Play ``clip`` ``factor`` times faster: shorter, and pitch scales with speed."""
    if not 0.5 < factor <= 2.0:
        raise ValueError(f"speed factor must lie in (0.5, 2.0], got {factor}")
    if factor == 1.0:
        return clip.with_samples(clip.samples.copy())
    n_out = int(round(len(clip) / factor))
    cutoff = CUTOFF_FRACTION * min(1.0, 1.0 / factor) / 2.0
    return clip.with_samples(resample_by_step(clip.samples, factor, n_out, cutoff))


def ir_envelope(n, rt60_s: float, rate: int):
    return np.exp(-RT60_DECAY * np.asarray(n, dtype=np.float64) / (rt60_s * rate))


def synth_impulse_response(kind, rt60_s: float, rate: int, rng: np.random.Generator) -> AudioClip:
    """Exponentially decaying Gaussian tail with unit peak.

    Hall responses also carry five sparse early reflections in the first 50 ms.
    """
    kind = Kind(kind)
    if kind not in (Kind.REVERB, Kind.HALL):
        raise ValueError(f"no impulse response for {kind}")
    if rt60_s <= 0:
        raise ValueError(f"rt60_s must be positive, got {rt60_s}")
    n = int(math.ceil(rt60_s * rate))
    h = ir_envelope(np.arange(n), rt60_s, rate) * rng.standard_normal(n)
    if kind is Kind.HALL:
        early = max(2, min(n, int(0.05 * rate)))
        delays = rng.choice(np.arange(1, early), size=min(5, early - 1), replace=False)
        amps = rng.uniform(0.4, 0.9, size=delays.size) * rng.choice([-1.0, 1.0], size=delays.size)
        h[delays] += amps * np.max(np.abs(h))
    return AudioClip(h / np.max(np.abs(h)), rate)


def apply_ir(clip: AudioClip, ir: AudioClip) -> AudioClip:
    """Convolve with ``ir``, keep the first ``len(clip)`` samples, restore input peak."""
    if clip.rate != ir.rate:
        raise RateMismatch(f"clip at {clip.rate} Hz, impulse response at {ir.rate} Hz")
    y = convolve_full(clip.samples, ir.samples)[: len(clip)]
    peak_in = clip.peak
    peak_out = float(np.max(np.abs(y))) if len(y) else 0.0
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return clip.with_samples(y)


# --------------------------------------------------------------------------
# synthetic noise


def _normalize_rms(x, target=NOISE_RMS):
    r = np.sqrt(np.mean(x * x))
    return x * (target / r) if r > 0 else x


def _pink(n, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n)


def _horn(n, rate, rng):
    t = np.arange(n) / rate
    f0 = 400.0 * rng.uniform(0.97, 1.03)
    x = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi))
    return x * am


def _nature(n, rate, rng):
    x = _pink(n, rng)
    x = x / (np.std(x) + 1e-12)
    for _ in range(max(1, int(n / rate * 4))):
        dur = int(rng.uniform(0.03, 0.12) * rate)
        start = int(rng.integers(0, max(1, n - dur)))
        tt = np.arange(min(dur, n - start)) / rate
        f_start, f_end = rng.uniform(2000, 5000, size=2)
        sweep = f_start + (f_end - f_start) * tt / max(tt[-1], 1e-9) if tt.size else tt
        phase = 2 * np.pi * np.cumsum(sweep) / rate
        x[start : start + tt.size] += 2.0 * np.hanning(tt.size) * np.sin(phase)
    return x


def _vehicle(n, rate, rng):
    brown = np.cumsum(rng.standard_normal(n))
    brown -= np.linspace(brown[0], brown[-1], n)
    # one-pole low-pass around 300 Hz
    a = math.exp(-2 * math.pi * 300.0 / rate)
    return lfilter([1 - a], [1, -a], brown)


def _hum(n, rate, rng):
    t = np.arange(n) / rate
    return sum(
        (0.6**k) * np.sin(2 * np.pi * 50.0 * (k + 1) * t + rng.uniform(0, 2 * np.pi))
        for k in range(5)
    )


def _factory(n, rate, rng):
    x = np.zeros(n)
    # white-noise bursts
    for _ in range(max(1, int(n / rate * 6))):
        dur = int(rng.uniform(0.02, 0.15) * rate)
        start = int(rng.integers(0, max(1, n - dur)))
        seg = rng.standard_normal(min(dur, n - start))
        x[start : start + seg.size] += seg * np.hanning(seg.size)
    # periodic impacts
    period = int(rng.uniform(0.15, 0.35) * rate)
    decay = np.exp(-np.arange(int(0.03 * rate)) / (0.005 * rate))
    for start in range(int(rng.integers(0, period)), n, period):
        seg = decay[: n - start] * rng.standard_normal(min(decay.size, n - start))
        x[start : start + seg.size] += 4.0 * seg
    return x + 0.05 * rng.standard_normal(n)


_GENERATORS = {
    NoiseCategory.HORN: _horn,
    NoiseCategory.NATURE: _nature,
    NoiseCategory.VEHICLE: _vehicle,
    NoiseCategory.HUM: _hum,
    NoiseCategory.FACTORY: _factory,
}


def synth_noise(category, duration_s: float, rate: int, rng: np.random.Generator) -> AudioClip:
    """Synthetic stand-in for a recorded noise of ``category``, RMS 0.1."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = max(1, int(round(duration_s * rate)))
    x = _GENERATORS[NoiseCategory(category)](n, rate, rng)
    return AudioClip(_normalize_rms(np.asarray(x, dtype=np.float64)), rate)


# --------------------------------------------------------------------------
# applying specs and expanding datasets


def apply_spec(clip: AudioClip, spec: AugmentationSpec, noise_bank: Optional[dict] = None) -> AudioClip:
    """Apply one sampled transform; all randomness comes from ``spec.seed``.

    ``noise_bank`` optionally maps a :class:`NoiseCategory` to a list of
    recorded noise clips (at the clip's rate) used instead of synthetic noise.
    """
    rng = np.random.default_rng(spec.seed)
    t = spec.transform
    if isinstance(t, Noise):
        bank = (noise_bank or {}).get(t.category)
        if bank:
            noise = bank[int(rng.integers(len(bank)))]
            offset = int(rng.integers(len(noise)))
        else:
            noise = synth_noise(t.category, max(clip.duration, 1.0 / clip.rate), clip.rate, rng)
            offset = 0
        return mix_noise_at_snr(clip, noise, t.snr_db, offset=offset)
    if isinstance(t, Speed):
        return change_speed(clip, t.factor)
    ir = synth_impulse_response(t.kind, t.rt60_s, clip.rate, rng)
    return apply_ir(clip, ir)


def expand_dataset(manifest, policy: AugmentationPolicy, factor: int, out_dir, seed: int,
                   noise_bank: Optional[dict] = None):
    """Copy every entry into ``out_dir`` and add ``factor - 1`` augmented variants.

    Each entry draws its specs from a stream derived from ``(seed, index)``,
    so the output does not depend on processing order.
    """
    from digitrec.data import Manifest, ManifestEntry

    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, entry in enumerate(manifest.entries):
        src = manifest.resolve(entry)
        rel = Path(entry.path)
        try:
            dest = out_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            if src.resolve() != dest.resolve():
                shutil.copyfile(src, dest)
            entries.append(ManifestEntry(rel.as_posix(), entry.label, entry.source_id,
                                         entry.augmentation, entry.split))
            if factor == 1:
                continue
            clip = read_wav(src)
            rng = derive_rng(seed, "expand", index)
            for k in range(1, factor):
                spec = sample_spec(policy, rng)
                out = apply_spec(clip, spec, noise_bank)
                aug_rel = rel.with_name(f"{rel.stem}_aug{k}{rel.suffix}")
                write_wav(out_dir / aug_rel, out)
                entries.append(ManifestEntry(aug_rel.as_posix(), entry.label, entry.source_id,
                                             spec, entry.split))
        except (DigitRecError, OSError, ValueError) as exc:
            raise TransformError(entry.path, exc) from exc
    return Manifest(entries, out_dir)
