"""Noise-robust spoken digit recognition: augmentation, MFCC features and a
residual-CNN + BiGRU classifier on a small numpy autograd engine."""

from digitrec.audio import AudioClip, read_wav, write_wav, resample
from digitrec.features import MfccConfig, mfcc, add_deltas, to_model_input
from digitrec.model import ModelConfig, init_model, forward, predict

__all__ = [
    "AudioClip",
    "read_wav",
    "write_wav",
    "resample",
    "MfccConfig",
    "mfcc",
    "add_deltas",
    "to_model_input",
    "ModelConfig",
    "init_model",
    "forward",
    "predict",
]

__version__ = "0.1.0"
