"""MFCC extraction, delta features and fixed-size model input."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.fft import dct

from digitrec.audio import AudioClip
from digitrec.errors import (
    EmptySignal,
    IoFailure,
    MalformedFeatureFile,
    RateMismatch,
    TooShort,
    WrongCoeffCount,
)

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    alpha: float = 0.97
    rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    nfft: int = 512
    n_mels: int = 40
    n_ceps: int = 13
    fmin: float = 0.0
    fmax: Optional[float] = None
    window: str = "hamming"
    cmn: bool = True

    def __post_init__(self):
        if self.nfft < self.frame_len:
            raise ValueError(f"nfft={self.nfft} shorter than a {self.frame_len}-sample frame")
        if self.n_ceps > self.n_mels:
            raise ValueError(f"n_ceps={self.n_ceps} exceeds n_mels={self.n_mels}")
        if not 0 <= self.fmin < self.high_freq <= self.rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= rate/2, got {self.fmin}, {self.high_freq}")
        if self.window not in ("hamming", "hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def frame_len(self) -> int:
        return int(round(self.rate * self.frame_ms / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.rate * self.hop_ms / 1000.0))

    @property
    def high_freq(self) -> float:
        return self.rate / 2 if self.fmax is None else float(self.fmax)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # frames x coeffs

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def pre_emphasis(x, alpha: float = 0.97) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("pre-emphasis of an empty signal")
    y = x.copy()
    y[1:] -= alpha * x[:-1]
    return y


@lru_cache(maxsize=16)
def _filterbank(n_mels, nfft, rate, fmin, fmax):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.clip(np.minimum(up, down), 0.0, None)
    peaks = fb.max(axis=1, keepdims=True)
    if np.any(peaks == 0):
        raise ValueError("a mel filter covers no FFT bin; raise nfft or lower n_mels")
    fb = fb / peaks
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular mel filters (n_mels x nfft/2+1), each scaled to a peak of 1."""
    return _filterbank(cfg.n_mels, cfg.nfft, cfg.rate, float(cfg.fmin), cfg.high_freq)


def _window(cfg: MfccConfig):
    n = cfg.frame_len
    if cfg.window == "hamming":
        return np.hamming(n)
    if cfg.window == "hann":
        return np.hanning(n)
    return np.ones(n)


def frame_signal(x, frame_len, hop_len):
    n_frames = 1 + (len(x) - frame_len) // hop_len
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop_len][:n_frames]


def power_spectrum(frames, nfft):
    return np.abs(np.fft.rfft(frames, nfft)) ** 2 / nfft


def mfcc(clip: AudioClip, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Pre-emphasis, Hamming frames, power spectrum, log mel energies, DCT-II, CMN."""
    if clip.rate != cfg.rate:
        raise RateMismatch(f"clip at {clip.rate} Hz, features expect {cfg.rate} Hz")
    if len(clip) < cfg.frame_len:
        raise TooShort(f"{len(clip)} samples is shorter than one {cfg.frame_len}-sample frame")
    x = pre_emphasis(clip.samples, cfg.alpha)
    frames = frame_signal(x, cfg.frame_len, cfg.hop_len) * _window(cfg)
    energies = power_spectrum(frames, cfg.nfft) @ mel_filterbank(cfg).T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, : cfg.n_ceps]
    if cfg.cmn:
        ceps = ceps - ceps.mean(axis=0, keepdims=True)
    return FeatureMatrix(ceps)


def _deltas(c, width=2):
    padded = np.pad(c, ((width, width), (0, 0)), mode="edge")
    n = len(c)
    num = sum(k * (padded[width + k : width + k + n] - padded[width - k : width - k + n])
              for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def add_deltas(f: FeatureMatrix) -> FeatureMatrix:
    """Append first and second order regression deltas (window 2)."""
    d1 = _deltas(f.values)
    d2 = _deltas(d1)
    return FeatureMatrix(np.concatenate([f.values, d1, d2], axis=1))


def to_model_input(f: FeatureMatrix, target_frames: int = 80, target_coeffs: int = 40) -> np.ndarray:
    """Zero-pad/truncate to a (1, coeffs, frames) array."""
    if f.n_coeffs != 39:
        raise WrongCoeffCount(f"expected 39 coefficients (13 + deltas), got {f.n_coeffs}")
    if target_coeffs < f.n_coeffs:
        raise WrongCoeffCount(f"target_coeffs={target_coeffs} below {f.n_coeffs}")
    out = np.zeros((1, target_coeffs, target_frames))
    n = min(target_frames, f.n_frames)
    out[0, : f.n_coeffs, :n] = f.values[:n].T
    return out


def clip_features(clip: AudioClip, cfg: MfccConfig = MfccConfig(), target_frames=80, target_coeffs=40):
    """Resample to ``cfg.rate`` if needed, then MFCC + deltas + model shaping."""
    from digitrec.audio import resample

    if clip.rate != cfg.rate:
        clip = resample(clip, cfg.rate)
    return to_model_input(add_deltas(mfcc(clip, cfg)), target_frames, target_coeffs)


# --------------------------------------------------------------------------
# feature file dump

_MAGIC = b"MFCC"


def write_feature_file(path, f: FeatureMatrix) -> None:
    header = _MAGIC + struct.pack("<III", f.n_frames, f.n_coeffs, 0)
    body = np.ascontiguousarray(f.values, dtype="<f4").tobytes()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_feature_file(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise MalformedFeatureFile(f"{path}: not an MFCC feature file")
    n_frames, n_coeffs, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * n_frames * n_coeffs
    if len(raw) != expected:
        raise MalformedFeatureFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw[16:], dtype="<f4").reshape(n_frames, n_coeffs)
    return FeatureMatrix(values.astype(np.float64))
