"""Residual CNN + BiGRU digit classifier, initialization and checkpoints.

Data flow for the default configuration::

    (B, 1, 40, 80)  conv 1->32, k3 s2 p1
    (B, 32, 20, 40) 3 x residual [LN(20) -> GELU -> conv] x 2 + skip
    (B, 40, 640)    frames as a sequence; linear 640 -> 512 per frame
    (40, B, 512)    5 x [LN -> GELU -> BiGRU(512)]
    (40, B, 1024)   mean over time
    (B, 1024)       linear -> GELU -> dropout -> linear -> softmax
    (B, 10)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from digitrec.audio import AudioClip
from digitrec.errors import CorruptCheckpoint, IoFailure, ShapeMismatch, UnknownVersion
from digitrec.features import MfccConfig, clip_features
from digitrec.nn import functional as F
from digitrec.nn.functional import GRUParams, conv_out_size
from digitrec.nn.tensor import Tensor, add, as_tensor, mean, reshape, transpose

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_coeffs: int = 40
    in_frames: int = 80
    cnn_channels: int = 32
    kernel: int = 3
    first_stride: int = 2
    n_res_blocks: int = 3
    bridge_out: int = 512
    rnn_hidden: int = 512
    n_rnn_blocks: int = 5
    n_classes: int = 10
    dropout_p: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "dropout_p":
                if not 0.0 <= v < 1.0:
                    raise ValueError(f"dropout_p must lie in [0, 1), got {v}")
            elif v < 1 and f.name != "n_res_blocks":
                raise ValueError(f"{f.name} must be positive, got {v}")
        if self.n_res_blocks < 0:
            raise ValueError("n_res_blocks must be >= 0")

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def conv_coeffs(self) -> int:
        return conv_out_size(self.in_coeffs, self.kernel, self.first_stride, self.padding)

    @property
    def conv_frames(self) -> int:
        return conv_out_size(self.in_frames, self.kernel, self.first_stride, self.padding)

    @property
    def conv_shape(self):
        return (self.cnn_channels, self.conv_coeffs, self.conv_frames)

    @property
    def frame_features(self) -> int:
        return self.cnn_channels * self.conv_coeffs

    @property
    def flat_size(self) -> int:
        return self.frame_features * self.conv_frames

    def rnn_input(self, block: int) -> int:
        return self.bridge_out if block == 0 else 2 * self.rnn_hidden


# --------------------------------------------------------------------------
# parameters


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def param_shapes(cfg: ModelConfig) -> dict:
    """Ordered name -> shape registry for ``cfg``."""
    c, k, hid = cfg.cnn_channels, cfg.kernel, cfg.rnn_hidden
    shapes = {"conv.weight": (c, 1, k, k), "conv.bias": (c,)}
    for i in range(cfg.n_res_blocks):
        for j in (1, 2):
            shapes[f"res{i}.ln{j}.gamma"] = (cfg.conv_coeffs,)
            shapes[f"res{i}.ln{j}.beta"] = (cfg.conv_coeffs,)
            shapes[f"res{i}.conv{j}.weight"] = (c, c, k, k)
            shapes[f"res{i}.conv{j}.bias"] = (c,)
    shapes["bridge.weight"] = (cfg.bridge_out, cfg.frame_features)
    shapes["bridge.bias"] = (cfg.bridge_out,)
    for i in range(cfg.n_rnn_blocks):
        n_in = cfg.rnn_input(i)
        shapes[f"gru{i}.ln.gamma"] = (n_in,)
        shapes[f"gru{i}.ln.beta"] = (n_in,)
        for d in ("fwd", "bwd"):
            shapes[f"gru{i}.{d}.w_ih"] = (3 * hid, n_in)
            shapes[f"gru{i}.{d}.w_hh"] = (3 * hid, hid)
            shapes[f"gru{i}.{d}.b_ih"] = (3 * hid,)
            shapes[f"gru{i}.{d}.b_hh"] = (3 * hid,)
    shapes["fc1.weight"] = (hid, 2 * hid)
    shapes["fc1.bias"] = (hid,)
    shapes["fc2.weight"] = (cfg.n_classes, hid)
    shapes["fc2.bias"] = (cfg.n_classes,)
    return shapes


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> dict:
    """Fresh parameters: Kaiming-uniform conv/linear weights, U(+-1/sqrt(H)) GRU
    weights, unit layer-norm gains, zero biases."""
    params = {}
    hid = cfg.rnn_hidden
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            value = np.ones(shape)
        elif leaf in ("beta", "bias"):
            value = np.zeros(shape)
        elif name.startswith("gru"):
            if leaf.startswith("w_"):
                value = rng.uniform(-1 / math.sqrt(hid), 1 / math.sqrt(hid), size=shape)
            else:
                value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            value = _kaiming_uniform(rng, shape, fan_in)
        params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
    return params


def count_parameters(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def _gru(params, prefix):
    return GRUParams(*(params[f"{prefix}.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh")))


# --------------------------------------------------------------------------
# forward pass


# The convolutional stack runs on (B, C, frames, coeffs) so that the coefficient
# axis normalized by the residual layer norms is trailing. Kernels are indexed
# (out, in, frame offset, coeff offset) accordingly.


def residual_block(params, prefix, x):
    y = x
    for j in (1, 2):
        y = F.gelu(F.layer_norm(y, params[f"{prefix}.ln{j}.gamma"], params[f"{prefix}.ln{j}.beta"]))
        w = params[f"{prefix}.conv{j}.weight"]
        y = F.conv2d(y, w, params[f"{prefix}.conv{j}.bias"], stride=1, padding=w.shape[-1] // 2)
    return add(x, y)


def _conv_stack(params, cfg: ModelConfig, x):
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1:] != (1, cfg.in_coeffs, cfg.in_frames):
        raise ShapeMismatch(f"model input must be (B, 1, {cfg.in_coeffs}, {cfg.in_frames}), got {x.shape}")
    y = F.conv2d(transpose(x, (0, 1, 3, 2)), params["conv.weight"], params["conv.bias"],
                 stride=cfg.first_stride, padding=cfg.padding)
    for i in range(cfg.n_res_blocks):
        y = residual_block(params, f"res{i}", y)
    return y


def feature_maps(params, cfg: ModelConfig, x):
    """Convolutional front end output as (B, C, coeffs', frames')."""
    return transpose(_conv_stack(params, cfg, x), (0, 1, 3, 2))


def logits(params, cfg: ModelConfig, x, training=False, rng=None):
    """Unnormalized class scores (B, n_classes)."""
    maps = _conv_stack(params, cfg, x)
    bsz = maps.shape[0]
    # (B, C, T, F) -> (B, T, C*F): each frame becomes one sequence element
    seq = reshape(transpose(maps, (0, 2, 1, 3)), (bsz, cfg.conv_frames, cfg.frame_features))
    seq = F.linear(seq, params["bridge.weight"], params["bridge.bias"])
    h = transpose(seq, (1, 0, 2))
    for i in range(cfg.n_rnn_blocks):
        h = F.gelu(F.layer_norm(h, params[f"gru{i}.ln.gamma"], params[f"gru{i}.ln.beta"]))
        h = F.bigru(h, _gru(params, f"gru{i}.fwd"), _gru(params, f"gru{i}.bwd"))
    pooled = mean(h, axis=0)
    z = F.gelu(F.linear(pooled, params["fc1.weight"], params["fc1.bias"]))
    z = F.dropout(z, cfg.dropout_p, training, rng)
    return F.linear(z, params["fc2.weight"], params["fc2.bias"])


def forward(params, cfg: ModelConfig, x, training=False, rng=None):
    """Class probabilities (B, n_classes)."""
    return F.softmax(logits(params, cfg, x, training, rng))


def predict_batch(params, cfg: ModelConfig, x, batch_size=64) -> np.ndarray:
    """Eval-mode probabilities for an (N, 1, coeffs, frames) array, in chunks."""
    x = np.asarray(x)
    dtype = next(iter(params.values())).dtype
    # untracked copies of the parameters: no graph is recorded
    params = {k: Tensor(v.data) for k, v in params.items()}
    out = []
    for i in range(0, len(x), batch_size):
        out.append(forward(params, cfg, Tensor(x[i : i + batch_size].astype(dtype, copy=False))).data)
    return np.concatenate(out) if out else np.zeros((0, cfg.n_classes))


def predict(params, cfg: ModelConfig, clip: AudioClip, mfcc_cfg: MfccConfig = MfccConfig()):
    """Classify one clip; returns ``(digit, probs)``; ties go to the lowest index."""
    x = clip_features(clip, mfcc_cfg, cfg.in_frames, cfg.in_coeffs)[None]
    probs = predict_batch(params, cfg, x)[0]
    return int(np.argmax(probs)), probs


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict, cfg: ModelConfig, meta: Optional[dict] = None) -> None:
    """Write ``model.json`` (config, metadata, parameter index) and ``params.bin``."""
    path = Path(path)
    index, offset, blobs = [], 0, []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        index.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float64" if arr.dtype.itemsize == 8 else "float32",
            "offset": offset,
            "length": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    doc = {"version": CHECKPOINT_VERSION, "config": asdict(cfg), "meta": meta or {}, "params": index}
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / "params.bin").write_bytes(b"".join(blobs))
        (path / "model.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Return ``(params, cfg, meta)``; sizes are validated against the index."""
    path = Path(path)
    try:
        doc = json.loads((path / "model.json").read_text())
        blob = (path / "params.bin").read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path / 'model.json'}: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UnknownVersion(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**doc["config"])
    expected = param_shapes(cfg)
    params, end = {}, 0
    for item in doc["params"]:
        name = item["name"]
        dtype = np.dtype({"float64": "<f8", "float32": "<f4"}[item["dtype"]])
        shape = tuple(item["shape"])
        n = int(np.prod(shape)) * dtype.itemsize
        if item["length"] != n or item["offset"] != end or item["offset"] + n > len(blob):
            raise CorruptCheckpoint(f"{name}: offset/length do not match params.bin ({len(blob)} bytes)")
        if name in params:
            raise CorruptCheckpoint(f"duplicate parameter {name}")
        if expected.get(name) != shape:
            raise CorruptCheckpoint(f"{name}: shape {shape} does not fit the stored config")
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=item["offset"]).reshape(shape)
        params[name] = Tensor(arr.astype(dtype.newbyteorder("="), copy=True), requires_grad=True, name=name)
        end += n
    if end != len(blob):
        raise CorruptCheckpoint(f"params.bin has {len(blob)} bytes, index covers {end}")
    missing = set(expected) - set(params)
    if missing:
        raise CorruptCheckpoint(f"missing parameters: {sorted(missing)}")
    params = {name: params[name] for name in expected}
    return params, cfg, doc["meta"]
