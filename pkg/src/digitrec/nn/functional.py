"""Differentiable layers. Every op returns a :class:`Tensor` whose backward
closure implements the exact vector-Jacobian product."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from digitrec.errors import LabelOutOfRange, ShapeMismatch
from digitrec.nn.tensor import Tensor, as_tensor, concat, flip, make

_GELU_C = math.sqrt(2.0 / math.pi)


def _cast(x, like):
    return np.asarray(x, dtype=like.dtype)


# --------------------------------------------------------------------------
# convolution


def conv_out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _patches(xpt, k, stride, h_out, w_out):
    """Channel-major padded input (C, B, Hp, Wp) -> (k*k*C, B*h_out*w_out).

    Row ``(i*k + j)*C + c`` holds input channel ``c`` shifted by kernel offset
    ``(i, j)``; each row block is one contiguous strided slice.
    """
    c, bsz = xpt.shape[:2]
    cols = np.empty((k, k, c, bsz, h_out, w_out), dtype=xpt.dtype)
    for i in range(k):
        for j in range(k):
            cols[i, j] = xpt[:, :, i : i + stride * (h_out - 1) + 1 : stride,
                             j : j + stride * (w_out - 1) + 1 : stride]
    return cols.reshape(k * k * c, -1)


def conv2d(x, w, b, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    x: (B, C_in, H, W), w: (C_out, C_in, k, k), b: (C_out,) -> (B, C_out, H', W').
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv2d expects 4-D input and square 4-D kernel, got {x.shape}, {w.shape}")
    bsz, c_in, h, wd = x.shape
    c_out, c_in_w, k, _ = w.shape
    if c_in != c_in_w:
        raise ShapeMismatch(f"input has {c_in} channels, kernel expects {c_in_w}")
    if b.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {b.shape}, expected ({c_out},)")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ShapeMismatch(f"kernel {k} larger than padded input {h + 2 * padding}x{wd + 2 * padding}")
    h_out = conv_out_size(h, k, stride, padding)
    w_out = conv_out_size(wd, k, stride, padding)

    xpt = np.pad(x.data.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _patches(xpt, k, stride, h_out, w_out)
    # kernel flattened in the same (i, j, c) order as the patch rows
    wmat = w.data.transpose(0, 2, 3, 1).reshape(c_out, -1)
    out = (wmat @ cols + b.data[:, None]).reshape(c_out, bsz, h_out, w_out).transpose(1, 0, 2, 3)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = (gt @ cols.T).reshape(c_out, k, k, c_in).transpose(0, 3, 1, 2) if w.requires_grad else None
        gb = gt.sum(axis=1) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gt).reshape(k, k, c_in, bsz, h_out, w_out)
            gxp = np.zeros_like(xpt)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * (h_out - 1) + 1 : stride,
                        j : j + stride * (w_out - 1) + 1 : stride] += dcols[i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + wd].transpose(1, 0, 2, 3)
        return gx, gw, gb

    return make(np.ascontiguousarray(out), (x, w, b), backward)


# --------------------------------------------------------------------------
# normalization and activations


def layer_norm(x, gamma, beta, normalized_len=None, eps=1e-5):
    """Normalize over the trailing axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if normalized_len is not None and n != normalized_len:
        raise ShapeMismatch(f"trailing axis is {n}, layer norm expects {normalized_len}")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeMismatch(f"affine parameters must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _cast(eps, x.data))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make(out, (x, gamma, beta), backward)


def gelu(x):
    """GELU, tanh approximation."""
    x = as_tensor(x)
    a = x.data
    a2 = a * a
    inner = _GELU_C * a * (1.0 + 0.044715 * a2)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * a2)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

    return make(out, (x,), backward)


def sigmoid(a):
    return expit(a)


def linear(x, w, b):
    """y = x @ w.T + b over the trailing axis."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input trailing dim {x.shape[-1]} vs weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: bias {b.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[1])
    out = (x2 @ w.data.T + b.data).reshape(*lead, w.shape[0])

    def backward(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return make(out, (x, w, b), backward)


def dropout(x, p, training, rng=None):
    """Inverted dropout; the identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * _cast(1.0 / (1.0 - p), x.data)

    def backward(g):
        return (g * keep,)

    return make(x.data * keep, (x,), backward)


# --------------------------------------------------------------------------
# recurrent layers


@dataclass
class GRUParams:
    """Gate-stacked weights in (reset, update, candidate) order."""

    w_ih: Tensor  # (3H, n_in)
    w_hh: Tensor  # (3H, H)
    b_ih: Tensor  # (3H,)
    b_hh: Tensor  # (3H,)

    @property
    def hidden(self):
        return self.w_hh.shape[1]

    def tensors(self):
        return (self.w_ih, self.w_hh, self.b_ih, self.b_hh)


def gru_sequence(x, h0, params: GRUParams):
    """Run a GRU over x (T, B, n_in) from h0 (B, H); returns all states (T, B, H).

    r = s(W_ir x + b_ir + W_hr h + b_hr)
    z = s(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    """
    x, h0 = as_tensor(x), as_tensor(h0)
    w_ih, w_hh, b_ih, b_hh = params.tensors()
    hid = params.hidden
    if x.ndim != 3:
        raise ShapeMismatch(f"gru_sequence expects (T, B, n_in), got {x.shape}")
    t_len, bsz, n_in = x.shape
    if w_ih.shape != (3 * hid, n_in) or w_hh.shape != (3 * hid, hid):
        raise ShapeMismatch(f"GRU weights {w_ih.shape}, {w_hh.shape} do not fit n_in={n_in}, H={hid}")
    if b_ih.shape != (3 * hid,) or b_hh.shape != (3 * hid,):
        raise ShapeMismatch("GRU biases must have shape (3H,)")
    if h0.shape != (bsz, hid):
        raise ShapeMismatch(f"h0 shape {h0.shape}, expected {(bsz, hid)}")

    X = x.data.reshape(t_len * bsz, n_in)
    gi = (X @ w_ih.data.T + b_ih.data).reshape(t_len, bsz, 3 * hid)
    wt = w_hh.data.T
    hs = np.empty((t_len + 1, bsz, hid), dtype=x.dtype)
    hs[0] = h0.data
    r_all = np.empty((t_len, bsz, hid), dtype=x.dtype)
    z_all = np.empty_like(r_all)
    n_all = np.empty_like(r_all)
    ghn_all = np.empty_like(r_all)
    for t in range(t_len):
        h = hs[t]
        gh = h @ wt + b_hh.data
        r = sigmoid(gi[t, :, :hid] + gh[:, :hid])
        z = sigmoid(gi[t, :, hid : 2 * hid] + gh[:, hid : 2 * hid])
        ghn = gh[:, 2 * hid :]
        n = np.tanh(gi[t, :, 2 * hid :] + r * ghn)
        hs[t + 1] = (1.0 - z) * n + z * h
        r_all[t], z_all[t], n_all[t], ghn_all[t] = r, z, n, ghn
    out = hs[1:].copy()

    def backward(g):
        w = w_hh.data
        dgi = np.empty((t_len, bsz, 3 * hid), dtype=x.dtype)
        dgh = np.empty_like(dgi)
        dh = np.zeros((bsz, hid), dtype=x.dtype)
        for t in range(t_len - 1, -1, -1):
            dh = dh + g[t]
            r, z, n, ghn, h_prev = r_all[t], z_all[t], n_all[t], ghn_all[t], hs[t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            da_n = dn * (1.0 - n * n)
            dr = da_n * ghn
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dgi[t, :, :hid] = da_r
            dgi[t, :, hid : 2 * hid] = da_z
            dgi[t, :, 2 * hid :] = da_n
            dgh[t, :, :hid] = da_r
            dgh[t, :, hid : 2 * hid] = da_z
            dgh[t, :, 2 * hid :] = da_n * r
            dh = dh * z + dgh[t] @ w
        dgi2 = dgi.reshape(t_len * bsz, 3 * hid)
        dgh2 = dgh.reshape(t_len * bsz, 3 * hid)
        gx = (dgi2 @ w_ih.data).reshape(x.shape) if x.requires_grad else None
        gh0 = dh if h0.requires_grad else None
        gw_ih = dgi2.T @ X if w_ih.requires_grad else None
        gw_hh = dgh2.T @ hs[:-1].reshape(t_len * bsz, hid) if w_hh.requires_grad else None
        gb_ih = dgi2.sum(axis=0) if b_ih.requires_grad else None
        gb_hh = dgh2.sum(axis=0) if b_hh.requires_grad else None
        return gx, gh0, gw_ih, gw_hh, gb_ih, gb_hh

    return make(out, (x, h0, w_ih, w_hh, b_ih, b_hh), backward)


def bigru(x, params_fwd: GRUParams, params_bwd: GRUParams, h0_fwd=None, h0_bwd=None):
    """Bidirectional GRU: (T, B, n_in) -> (T, B, 2H), forward states first."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"bigru expects (T, B, n_in), got {x.shape}")
    bsz = x.shape[1]
    if h0_fwd is None:
        h0_fwd = Tensor(np.zeros((bsz, params_fwd.hidden), dtype=x.dtype))
    if h0_bwd is None:
        h0_bwd = Tensor(np.zeros((bsz, params_bwd.hidden), dtype=x.dtype))
    fwd = gru_sequence(x, h0_fwd, params_fwd)
    bwd = flip(gru_sequence(flip(x, 0), h0_bwd, params_bwd), 0)
    return concat([fwd, bwd], axis=2)


# --------------------------------------------------------------------------
# output layers


def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(logits):
    logits = as_tensor(logits)
    p = np.exp(_log_softmax(logits.data))

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make(p, (logits,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Returns ``(loss, probs)`` where ``loss`` is a scalar tensor and ``probs``
    a plain array of row-normalized probabilities.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be (B, K), got {logits.shape}")
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ShapeMismatch(f"labels shape {labels.shape}, expected ({bsz},)")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k}), got {labels.tolist()}")
    logp = _log_softmax(logits.data)
    probs = np.exp(logp)
    rows = np.arange(bsz)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / bsz),)

    return make(np.asarray(loss, dtype=logits.dtype), (logits,), backward), probs
