"""Audio clips, WAV I/O, band-limited resampling and a few DSP primitives."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import i0

from digitrec.errors import EmptySignal, IoFailure, MalformedWav, UnsupportedEncoding

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE

RESAMPLE_TAPS = 64
KAISER_BETA = 8.6
CUTOFF_FRACTION = 0.95
_MAX_PHASES = 4096


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono float64 samples at an integer sample rate."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioClip samples must be 1-D, got shape {samples.shape}")
        if int(self.rate) != self.rate or self.rate <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {self.rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate", int(self.rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    @classmethod
    def silence(cls, n: int, rate: int) -> "AudioClip":
        return cls(np.zeros(n), rate)

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.rate)


# --------------------------------------------------------------------------
# WAV I/O


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise MalformedWav(f"fmt chunk too short ({len(body)} bytes)")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == _EXTENSIBLE:
        if len(body) < 40:
            raise MalformedWav("WAVE_FORMAT_EXTENSIBLE fmt chunk too short")
        # first two bytes of the subformat GUID carry the real format tag
        tag = struct.unpack("<H", body[24:26])[0]
    return tag, channels, rate, block_align, bits


def read_wav(path) -> AudioClip:
    """Read a PCM16 or float32 RIFF/WAVE file; stereo is averaged to mono."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: missing RIFF/WAVE header")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        start = pos + 8
        end = start + size
        if end > len(raw):
            raise MalformedWav(f"{path}: chunk {cid!r} overruns file ({end} > {len(raw)})")
        if cid == b"fmt ":
            fmt = _parse_fmt(raw[start:end])
        elif cid == b"data":
            data = raw[start:end]
        pos = end + (size & 1)
    if fmt is None:
        raise MalformedWav(f"{path}: no fmt chunk")
    if data is None:
        raise MalformedWav(f"{path}: no data chunk")

    tag, channels, rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels")
    if rate <= 0:
        raise MalformedWav(f"{path}: sample rate {rate}")
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"{path}: format tag {tag} with {bits} bits per sample")
    if block_align != channels * dtype.itemsize:
        raise MalformedWav(f"{path}: block align {block_align} inconsistent with format")

    n_frames = len(data) // block_align
    frames = np.frombuffer(data[: n_frames * block_align], dtype=dtype)
    samples = frames.astype(np.float64).reshape(n_frames, channels) * scale
    return AudioClip(samples.mean(axis=1), rate)


def quantize_pcm16(samples) -> np.ndarray:
    """Clamp to [-1, 1] and quantize to int16 codes (x * 32768, saturating)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as mono little-endian PCM16."""
    if len(clip) == 0:
        raise EmptySignal("refusing to write an empty clip")
    pcm = quantize_pcm16(clip.samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, _PCM, 1, clip.rate, clip.rate * 2, 2, 16)
    data = b"data" + struct.pack("<I", len(pcm)) + pcm
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + fmt + data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# resampling


def _kernel(offsets, cutoff):
    """Kaiser-windowed sinc evaluated at ``offsets`` (input samples).

    ``cutoff`` is in cycles per input sample. Rows are normalized to unit DC gain.
    """
    half = RESAMPLE_TAPS / 2
    arg = np.clip(1.0 - (offsets / half) ** 2, 0.0, None)
    window = i0(KAISER_BETA * np.sqrt(arg)) / i0(KAISER_BETA)
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * offsets) * window
    return h / h.sum(axis=-1, keepdims=True)


_TAP_OFFSETS = np.arange(-(RESAMPLE_TAPS // 2) + 1, RESAMPLE_TAPS // 2 + 1)


@lru_cache(maxsize=32)
def _phase_table(n_phases: int, cutoff: float) -> np.ndarray:
    frac = np.arange(n_phases)[:, None] / n_phases
    return _kernel(frac - _TAP_OFFSETS[None, :], cutoff)


def _interpolate(x, base, weights):
    pad = RESAMPLE_TAPS
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    idx = base[:, None] + _TAP_OFFSETS[None, :] + pad
    np.clip(idx, 0, xp.shape[0] - 1, out=idx)
    return np.einsum("ij,ij->i", xp[idx], weights)


def resample_by_step(x, step, n_out, cutoff):
    """Band-limited read of ``x`` at positions ``n * step`` for ``n < n_out``.

    ``step`` may be a :class:`Fraction`; when its denominator is small the
    kernel comes from a precomputed polyphase table, otherwise the kernel is
    evaluated per output sample.
    """
    x = np.asarray(x, dtype=np.float64)
    if n_out <= 0:
        return np.zeros(0)
    n = np.arange(n_out, dtype=np.int64)
    if isinstance(step, Fraction) and step.denominator <= _MAX_PHASES:
        num, den = step.numerator, step.denominator
        base = (n * num) // den
        phase = (n * num) % den
        weights = _phase_table(den, float(cutoff))[phase]
    else:
        pos = n * float(step)
        base = np.floor(pos).astype(np.int64)
        weights = _kernel((pos - base)[:, None] - _TAP_OFFSETS[None, :], cutoff)
    return _interpolate(x, base, weights)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Kaiser-windowed sinc resampling to ``target_rate``.

    Output length is ``round(len * target_rate / rate)``; the anti-aliasing
    cutoff sits at 0.95 of the lower Nyquist frequency.
    """
    if int(target_rate) != target_rate or target_rate <= 0:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == clip.rate:
        return AudioClip(clip.samples.copy(), clip.rate)
    n_out = int(round(len(clip) * target_rate / clip.rate))
    step = Fraction(clip.rate, target_rate)
    cutoff = CUTOFF_FRACTION * min(clip.rate, target_rate) / 2.0 / clip.rate
    return AudioClip(resample_by_step(clip.samples, step, n_out, cutoff), target_rate)


# --------------------------------------------------------------------------
# primitives

_FFT_THRESHOLD = 4096


def convolve_direct(x, h):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    out = np.zeros(len(x) + len(h) - 1)
    # loop over the shorter operand
    if len(h) > len(x):
        x, h = h, x
    for k, hk in enumerate(h):
        out[k : k + len(x)] += hk * x
    return out


def convolve_fft(x, h):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n = len(x) + len(h) - 1
    nfft = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)[:n]


def convolve_full(x, h, method: str = "auto"):
    """Full linear convolution, length ``len(x) + len(h) - 1``."""
    if len(x) == 0 or len(h) == 0:
        raise EmptySignal("convolve_full needs two non-empty sequences")
    if method == "auto":
        method = "fft" if min(len(x), len(h)) * max(len(x), len(h)) > _FFT_THRESHOLD * 64 else "direct"
    if method == "direct":
        return convolve_direct(x, h)
    if method == "fft":
        return convolve_fft(x, h)
    raise ValueError(f"unknown convolution method {method!r}")


def mean_power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("mean power of an empty signal")
    return float(np.mean(x * x))


def rms(x) -> float:
    return float(np.sqrt(mean_power(x)))


def tone(freq, duration_s, rate, amplitude=1.0, phase=0.0) -> AudioClip:
    t = np.arange(int(round(duration_s * rate))) / rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t + phase), rate)
