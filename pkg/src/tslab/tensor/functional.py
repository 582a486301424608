"""Differentiable network operations with hand-written backward passes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import backend
from .tensor import Tensor, _wrap, make, unbroadcast

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5
ROPE_BASE = 10000.0
_GELU_C = math.sqrt(2.0 / math.pi)


# -- convolution ---------------------------------------------------------------

def _kernel():
    return backend.active


def _correlate(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = _kernel() if xp.dtype == np.float64 and w.dtype == np.float64 else backend.reference
    return k.correlate(xp, w)


def _correlate_wgrad(xp: np.ndarray, g: np.ndarray, kshape) -> np.ndarray:
    k = _kernel() if xp.dtype == np.float64 and g.dtype == np.float64 else backend.reference
    return k.correlate_weight_grad(xp, g, kshape)


def _conv_nd(x: Tensor, weight: Tensor, bias: Optional[Tensor], padding: int, spatial: int) -> Tensor:
    """Shared 2-D/3-D convolution over 5-D (N, C, T, H, W) data."""
    name = f"conv{spatial}d"
    if x.ndim != spatial + 2:
        raise ValueError(f"{name}: input must have {spatial + 2} axes, got shape {x.shape}")
    if weight.ndim != spatial + 2:
        raise ValueError(f"{name}: weight must have {spatial + 2} axes, got shape {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ValueError(f"{name}: channel axis (1) mismatch: input has {x.shape[1]} channels, "
                         f"weight expects {weight.shape[1]}")
    ks = weight.shape[2:]
    axis_names = ("T", "H", "W")[-spatial:]
    for ax, k, n in zip(axis_names, ks, x.shape[2:]):
        if k % 2 == 0:
            raise ValueError(f"{name}: kernel extent along {ax} must be odd, got {k}")
        if n + 2 * padding - k + 1 < 1:
            raise ValueError(f"{name}: axis {ax} of length {n} too small for kernel {k} with padding {padding}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"{name}: bias must have shape ({weight.shape[0]},), got {bias.shape}")

    xd, wd = x.data, weight.data
    if spatial == 2:
        xd, wd = xd[:, :, None], wd[:, :, None]
        pads = ((0, 0), (0, 0), (0, 0), (padding, padding), (padding, padding))
    else:
        pads = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    xp = np.pad(xd, pads) if padding else np.ascontiguousarray(xd)
    out = _correlate(xp, wd)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    out_shape = out.shape if spatial == 3 else (out.shape[0], out.shape[1]) + out.shape[3:]

    def bw(g):
        g5 = g.reshape(out.shape)
        if bias is not None and bias.requires_grad:
            bias._accum(g5.sum(axis=(0, 2, 3, 4)))
        if weight.requires_grad:
            gw = _correlate_wgrad(xp, g5, wd.shape[2:])
            weight._accum(gw.reshape(weight.shape))
        if x.requires_grad:
            kt, kh, kw = wd.shape[2:]
            gp = np.pad(g5, ((0, 0), (0, 0), (kt - 1, kt - 1), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = np.ascontiguousarray(wd[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
            gxp = _correlate(gp, wflip)
            if padding:
                sl = (slice(None), slice(None)) + ((slice(None),) if spatial == 2 else (slice(padding, -padding),)) \
                    + (slice(padding, -padding),) * 2
                gxp = gxp[sl]
            x._accum(np.ascontiguousarray(gxp).reshape(x.shape))

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make(out.reshape(out_shape), parents, bw, name)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: int = 0) -> Tensor:
    """2-D cross-correlation, stride 1. ``x``: (N,C,H,W), ``weight``: (F,C,k,k)."""
    return _conv_nd(x, weight, bias, padding, 2)


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: int = 0) -> Tensor:
    """3-D cross-correlation, stride 1. ``x``: (N,C,T,H,W), ``weight``: (F,C,k,k,k)."""
    return _conv_nd(x, weight, bias, padding, 3)


# -- pooling -------------------------------------------------------------------

def maxpool(x: Tensor, window: Sequence[int]) -> Tensor:
    """Non-overlapping max pooling over the trailing ``len(window)`` axes.

    Stride equals the window; trailing partial windows are dropped. The
    gradient goes to the first maximal element of each window.
    """
    window = tuple(int(w) for w in window)
    nd = len(window)
    lead = x.shape[: x.ndim - nd]
    dims = x.shape[x.ndim - nd:]
    for ax, (w, n) in enumerate(zip(window, dims)):
        if w < 1:
            raise ValueError(f"maxpool: window entries must be >= 1, got {window}")
        if w > n:
            raise ValueError(f"maxpool: window {w} larger than axis {x.ndim - nd + ax} of length {n}")
    outd = tuple(n // w for n, w in zip(dims, window))
    crop = x.data[(Ellipsis,) + tuple(slice(0, o * w) for o, w in zip(outd, window))]
    split = lead + tuple(v for o, w in zip(outd, window) for v in (o, w))
    blocks = crop.reshape(split)
    nl = len(lead)
    win_axes = tuple(nl + 2 * i + 1 for i in range(nd))
    out_axes = tuple(nl + 2 * i for i in range(nd))
    perm = tuple(range(nl)) + out_axes + win_axes
    flat = blocks.transpose(perm).reshape(lead + outd + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        inv = np.argsort(perm)
        gblocks = gflat.reshape(lead + outd + window).transpose(inv).reshape(crop.shape)
        if crop.shape == x.shape:
            x._accum(gblocks)
        else:
            full = np.zeros_like(x.data)
            full[(Ellipsis,) + tuple(slice(0, o * w) for o, w in zip(outd, window))] = gblocks
            x._accum(full)

    return make(out, (x,), bw, "maxpool")


# -- normalisation -------------------------------------------------------------

@dataclass
class RunningStats:
    """Batch-norm running mean/variance (initialised to 0 / 1).

    With ``cumulative`` set, training-mode updates keep the plain average of
    all batches seen since ``steps`` was 0 instead of the exponential average.
    """

    mean: np.ndarray
    var: np.ndarray
    steps: int = 0
    cumulative: bool = False

    @classmethod
    def init(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.steps, self.cumulative)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats, training: bool,
               eps: float = NORM_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel normalisation over every axis except axis 1.

    Training mode normalises with batch statistics and updates ``running``
    (``r <- (1 - momentum) r + momentum * batch``, unbiased variance);
    eval mode uses the running statistics as constants.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: affine params must have shape ({c},), got {gamma.shape}, {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        mom = 1.0 / (running.steps + 1) if running.cumulative else momentum
        running.mean = (1 - mom) * running.mean + mom * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running.var = (1 - mom) * running.var + mom * unbiased
        running.steps += 1
    else:
        mu, var = running.mean, running.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                mg = gxhat.mean(axis=axes, keepdims=True)
                mgx = (gxhat * xhat).mean(axis=axes, keepdims=True)
                x._accum((gxhat - mg - xhat * mgx) * inv.reshape(bshape))
            else:
                x._accum(gxhat * inv.reshape(bshape))

    return make(out, (x, gamma, beta), bw, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: last axis is {d} but affine params have shapes {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=red))
        if beta.requires_grad:
            beta._accum(g.sum(axis=red))
        if x.requires_grad:
            gxhat = g * gamma.data
            x._accum((gxhat - gxhat.mean(-1, keepdims=True)
                      - xhat * (gxhat * xhat).mean(-1, keepdims=True)) * inv)

    return make(out, (x, gamma, beta), bw, "layer_norm")


# -- dense ---------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on the last axis: ``x @ weight.T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: last input axis is {x.shape[-1]}, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias must have shape ({weight.shape[0]},), got {bias.shape}")
    xd = x.data
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        if x.requires_grad:
            x._accum(g @ weight.data)
        if weight.requires_grad:
            weight._accum(g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias._accum(g.reshape(-1, g.shape[-1]).sum(0))

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make(out, parents, bw, "linear")


# -- attention -----------------------------------------------------------------

def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over (..., n, D_h) with scale 1/sqrt(D_h)."""
    if q.shape[-2] == 0 or k.shape[-2] == 0:
        raise ValueError("attention: sequence length must be >= 1")
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"attention: incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    p = _softmax((q.data @ np.swapaxes(k.data, -1, -2)) * scale)
    out = p @ v.data

    def bw(g):
        if v.requires_grad:
            v._accum(np.swapaxes(p, -1, -2) @ g)
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(-1, keepdims=True)) * scale
        if q.requires_grad:
            q._accum(gs @ k.data)
        if k.requires_grad:
            k._accum(np.swapaxes(gs, -1, -2) @ q.data)

    return make(out, (q, k, v), bw, "attention")


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-stochastic attention matrix (no tape), for inspection."""
    return _softmax((q @ np.swapaxes(k, -1, -2)) / math.sqrt(q.shape[-1]))


def rotary_tables(positions: Sequence[int], dim: int) -> tuple[np.ndarray, np.ndarray]:
    half = dim // 2
    freqs = ROPE_BASE ** (-np.arange(half, dtype=np.float64) * 2.0 / dim)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(ang), np.sin(ang)


def rotary_apply(x: Tensor, positions: Sequence[int]) -> Tensor:
    """Rotate feature pairs ``(i, i + D/2)`` of each token by ``pos * base^(-2i/D)``."""
    d = x.shape[-1]
    if d % 2:
        raise ValueError(f"rotary_apply: head dimension must be even, got {d}")
    if len(positions) != x.shape[-2]:
        raise ValueError(f"rotary_apply: {len(positions)} positions for {x.shape[-2]} tokens")
    cos, sin = rotary_tables(positions, d)
    h = d // 2
    x1, x2 = x.data[..., :h], x.data[..., h:]
    out = np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)

    def bw(g):
        g1, g2 = g[..., :h], g[..., h:]
        x._accum(np.concatenate([g1 * cos + g2 * sin, g2 * cos - g1 * sin], axis=-1))

    return make(out, (x,), bw, "rotary")


# -- activations ---------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    # logistic via tanh: no overflow for any z and a single transcendental pass
    out = np.multiply(z, 0.5)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: x._accum(g * s * (1.0 - s)), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make(t, (x,), lambda g: x._accum(g * (1.0 - t * t)), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: x._accum(g * mask), "relu")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    z = x.data
    u = _GELU_C * (z + 0.044715 * z ** 3)
    t = np.tanh(u)
    out = 0.5 * z * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du))

    return make(out, (x,), bw, "gelu")


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None


# -- recurrent cell --------------------------------------------------------------

def lstm_state(gates: Tensor, c_prev: Optional[Tensor]) -> Tensor:
    """``c = sigmoid(f) * c_prev + sigmoid(i) * tanh(g)`` with gates stacked (i, f, o, g) on axis 1."""
    hid = gates.shape[1] // 4
    z = gates.data
    si = _sigmoid(z[:, :hid])
    sf = _sigmoid(z[:, hid:2 * hid])
    tg = np.tanh(z[:, 3 * hid:])
    cp = c_prev.data if c_prev is not None else None
    out = si * tg if cp is None else sf * cp + si * tg

    def bw(g):
        if gates.requires_grad:
            gz = np.zeros_like(z)
            gz[:, :hid] = g * tg * si * (1.0 - si)
            if cp is not None:
                gz[:, hid:2 * hid] = g * cp * sf * (1.0 - sf)
            gz[:, 3 * hid:] = g * si * (1.0 - tg * tg)
            gates._accum(gz)
        if c_prev is not None and c_prev.requires_grad:
            c_prev._accum(g * sf)

    parents = (gates,) + ((c_prev,) if c_prev is not None else ())
    return make(out, parents, bw, "lstm_state")


def lstm_output(gates: Tensor, c: Tensor) -> Tensor:
    """``h = sigmoid(o) * tanh(c)``."""
    hid = gates.shape[1] // 4
    so = _sigmoid(gates.data[:, 2 * hid:3 * hid])
    tc = np.tanh(c.data)
    out = so * tc

    def bw(g):
        if gates.requires_grad:
            gz = np.zeros_like(gates.data)
            gz[:, 2 * hid:3 * hid] = g * tc * so * (1.0 - so)
            gates._accum(gz)
        if c.requires_grad:
            c._accum(g * so * (1.0 - tc * tc))

    return make(out, (gates, c), bw, "lstm_output")


# -- loss ------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))

    def bw(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), labels] -= 1.0
        logits._accum(g * p / n)

    return make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw, "cross_entropy")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return _softmax(x, axis)
