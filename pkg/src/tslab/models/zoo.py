"""Parameter layout, initialisation and forward passes for the three families.

Parameter names are stable strings (``l0.wx``, ``blk1.s.qkv`` ...) so that
checkpoints and the auditor can refer to them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..tensor import functional as F
from ..tensor.rng import RngState
from ..tensor.tensor import Tensor, concat, expand, stack, unstack
from .config import ModelConfig

CLS_STD = 0.02
INIT_STREAM = 1  # path component separating weight init from other seeded streams


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Tensor]
    stats: dict[str, F.RunningStats] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        for k, s in self.stats.items():
            out[f"stats/{k}/mean"] = s.mean
            out[f"stats/{k}/var"] = s.var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            a = np.asarray(arrays[f"param/{k}"], dtype=np.float64)
            if a.shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {a.shape} != model shape {p.shape}")
            p.data = a.copy()
        for k, s in self.stats.items():
            s.mean = np.asarray(arrays[f"stats/{k}/mean"], dtype=np.float64).copy()
            s.var = np.asarray(arrays[f"stats/{k}/var"], dtype=np.float64).copy()

    def clone(self) -> "ModelState":
        params = {k: Tensor(v.data.copy(), True, name=k) for k, v in self.params.items()}
        return ModelState(self.config, params, {k: s.copy() for k, s in self.stats.items()})


# -- layout ------------------------------------------------------------------------

def _spatial_after_pool(cfg: ModelConfig) -> tuple[int, int, int]:
    t, h, w = cfg.input.frames, cfg.input.height, cfg.input.width
    for i in range(cfg.blocks):
        if cfg.family == "CNN3D" and cfg.time_pooled(i):
            t //= 2
        h //= 2
        w //= 2
        if min(t, h, w) < 1:
            raise ValueError(f"{cfg.name or cfg.family}: input {cfg.input} collapses below 1 at block {i}")
    return t, h, w


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor with its shape, in creation order."""
    shapes: dict[str, tuple[int, ...]] = {}
    k_cls = cfg.num_classes
    if cfg.family == "ConvLSTM":
        c_in = cfg.input.channels
        for i, (h, k) in enumerate(zip(cfg.hidden, cfg.kernel_sizes)):
            shapes[f"l{i}.wx"] = (4 * h, c_in, k, k)
            shapes[f"l{i}.bx"] = (4 * h,)
            shapes[f"l{i}.wh"] = (4 * h, h, k, k)
            shapes[f"l{i}.bh"] = (4 * h,)
            shapes[f"l{i}.bn.gamma"] = (h,)
            shapes[f"l{i}.bn.beta"] = (h,)
            c_in = h
        _, hh, ww = _spatial_after_pool(cfg)
        feat = c_in if cfg.head == "gap" else c_in * hh * ww
        shapes["fc.w"] = (k_cls, feat)
        shapes["fc.b"] = (k_cls,)
    elif cfg.family == "CNN3D":
        c_in = cfg.input.channels
        for i, (h, k) in enumerate(zip(cfg.hidden, cfg.kernel_sizes)):
            shapes[f"l{i}.w"] = (h, c_in, k, k, k)
            shapes[f"l{i}.b"] = (h,)
            shapes[f"l{i}.bn.gamma"] = (h,)
            shapes[f"l{i}.bn.beta"] = (h,)
            c_in = h
        tt, hh, ww = _spatial_after_pool(cfg)
        shapes["fc.w"] = (k_cls, c_in * tt * hh * ww)
        shapes["fc.b"] = (k_cls,)
    else:
        d, inner, p = cfg.model_dim, cfg.inner_dim, cfg.patch_size
        shapes["embed.w"] = (d, cfg.input.channels * p * p)
        shapes["embed.b"] = (d,)
        shapes["cls"] = (d,)
        for i in range(cfg.depth):
            for part in ("t", "s"):
                shapes[f"blk{i}.{part}.norm.gamma"] = (d,)
                shapes[f"blk{i}.{part}.norm.beta"] = (d,)
                shapes[f"blk{i}.{part}.qkv"] = (3 * inner, d)
                shapes[f"blk{i}.{part}.out.w"] = (d, inner)
                shapes[f"blk{i}.{part}.out.b"] = (d,)
            shapes[f"blk{i}.ff.norm.gamma"] = (d,)
            shapes[f"blk{i}.ff.norm.beta"] = (d,)
            shapes[f"blk{i}.ff.w1"] = (8 * d, d)
            shapes[f"blk{i}.ff.b1"] = (8 * d,)
            shapes[f"blk{i}.ff.w2"] = (d, 4 * d)
            shapes[f"blk{i}.ff.b2"] = (d,)
        shapes["norm.gamma"] = (d,)
        shapes["norm.beta"] = (d,)
        shapes["fc.w"] = (k_cls, d)
        shapes["fc.b"] = (k_cls,)
    return shapes


def _init(name: str, shape: tuple[int, ...], rng: RngState) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape)
    if leaf == "beta" or (leaf.startswith("b") and len(shape) == 1):
        return np.zeros(shape)
    if name == "cls":
        return rng.normal(0.0, CLS_STD, shape)
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)  # kaiming-uniform with a=sqrt(5)
    return rng.uniform(-bound, bound, shape)


def build_model(cfg: ModelConfig, rng: RngState | int) -> ModelState:
    if isinstance(rng, int):
        rng = RngState(rng, (INIT_STREAM,))
    params = {}
    for i, (name, shape) in enumerate(param_shapes(cfg).items()):
        # one child stream per tensor: adding a tensor never reshuffles the others
        params[name] = Tensor(_init(name, shape, rng.child(i)), True, name=name)
    stats = {}
    if cfg.family != "TimeSformer":
        for i, h in enumerate(cfg.hidden):
            stats[f"l{i}.bn"] = F.RunningStats.init(h)
    return ModelState(cfg, params, stats)


# -- forward passes ------------------------------------------------------------------

def _check_clip(state: ModelState, clip: Tensor) -> None:
    g = state.config.input
    if clip.ndim != 5:
        raise ValueError(f"expected a clip batch [N,C,T,H,W], got shape {clip.shape}")
    _, c, t, h, w = clip.shape
    if c != g.channels:
        raise ValueError(f"channel axis: model expects {g.channels}, clip has {c}")
    if (h, w) != (g.height, g.width):
        raise ValueError(f"spatial axes: model expects {g.height}x{g.width}, clip has {h}x{w}")


def _bn(state: ModelState, prefix: str, x: Tensor, training: bool) -> Tensor:
    p = state.params
    return F.batch_norm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"], state.stats[prefix], training)


def convlstm_layer(state: ModelState, i: int, x: Tensor, hidden_trace: Optional[list] = None) -> Tensor:
    """One recurrent layer over [N,C,T,H,W]; returns the stacked hidden states [N,h,T,H,W]."""
    p = state.params
    k = state.config.kernel_sizes[i]
    pad = k // 2
    n, c, t, hh, ww = x.shape
    wh, bh = p[f"l{i}.wh"], p[f"l{i}.bh"]
    # input-to-gate convolutions for all timesteps at once
    xt = x.transpose(0, 2, 1, 3, 4).reshape(n * t, c, hh, ww)
    gx = F.conv2d(xt, p[f"l{i}.wx"], p[f"l{i}.bx"], pad).reshape(n, t, -1, hh, ww)
    h = c_state = None
    outs = []
    for g in unstack(gx, axis=1):
        # with h_{-1} = 0 the hidden convolution reduces to its bias
        g = g + (bh.reshape(1, -1, 1, 1) if h is None else F.conv2d(h, wh, bh, pad))
        c_state = F.lstm_state(g, c_state)
        h = F.lstm_output(g, c_state)
        if hidden_trace is not None:
            hidden_trace.append(h.data)
        outs.append(h)
    return stack(outs, axis=2)


def forward_convlstm(state: ModelState, clip: Tensor, training: bool = False,
                     hidden_trace: Optional[list] = None) -> Tensor:
    cfg = state.config
    if cfg.family != "ConvLSTM":
        raise ValueError(f"forward_convlstm called on a {cfg.family} model")
    _check_clip(state, clip)
    x = clip
    for i in range(cfg.blocks):
        seq = convlstm_layer(state, i, x, hidden_trace if i == 0 else None)
        x = _bn(state, f"l{i}.bn", F.maxpool(seq, (2, 2)), training)
    last = x[:, :, -1]
    feat = last.mean(axis=(2, 3)) if cfg.head == "gap" else last.reshape(last.shape[0], -1)
    return F.linear(feat, state.params["fc.w"], state.params["fc.b"])


def forward_cnn3d(state: ModelState, clip: Tensor, training: bool = False) -> Tensor:
    cfg = state.config
    if cfg.family != "CNN3D":
        raise ValueError(f"forward_cnn3d called on a {cfg.family} model")
    _check_clip(state, clip)
    p = state.params
    x = clip
    for i, k in enumerate(cfg.kernel_sizes):
        x = F.relu(F.conv3d(x, p[f"l{i}.w"], p[f"l{i}.b"], k // 2))
        x = F.maxpool(x, (2 if cfg.time_pooled(i) else 1, 2, 2))
        x = _bn(state, f"l{i}.bn", x, training)
    return F.linear(x.reshape(x.shape[0], -1), p["fc.w"], p["fc.b"])


def patchify(clip: Tensor, patch: int) -> Tensor:
    """[N,C,T,H,W] -> [N,T,P,C*patch*patch] with patches in row-major order."""
    n, c, t, h, w = clip.shape
    hp, wp = h // patch, w // patch
    x = clip.reshape(n, c, t, hp, patch, wp, patch).transpose(0, 2, 3, 5, 1, 4, 6)
    return x.reshape(n, t, hp * wp, c * patch * patch)


def _qkv(state: ModelState, prefix: str, seq: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """seq [..., n, D] -> q, k, v [..., A, n, D_h], rotary positions applied to q and k."""
    cfg = state.config
    a, dh = cfg.heads, cfg.head_dim
    lead, n = seq.shape[:-2], seq.shape[-2]
    qkv = F.linear(seq, state.params[f"{prefix}.qkv"]).reshape(*lead, n, 3, a, dh)
    nl = len(lead)
    # -> [3, ..., A, n, D_h]
    q, k, v = unstack(qkv.transpose((nl + 1,) + tuple(range(nl)) + (nl + 2, nl, nl + 3)), axis=0)
    if cfg.rotary:
        pos = list(range(n))
        q, k = F.rotary_apply(q, pos), F.rotary_apply(k, pos)
    return q, k, v


def _merge_heads(state: ModelState, prefix: str, o: Tensor) -> Tensor:
    """[..., A, n, D_h] -> output projection [..., n, D]."""
    nl = o.ndim - 3
    lead, n = o.shape[:nl], o.shape[-2]
    o = o.transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2)).reshape(*lead, n, -1)
    return F.linear(o, state.params[f"{prefix}.out.w"], state.params[f"{prefix}.out.b"])


def _attend(state: ModelState, prefix: str, seq: Tensor) -> Tensor:
    """Pre-normed multi-head attention within groups: seq [..., n, D] -> [..., n, D]."""
    return _merge_heads(state, prefix, F.attention(*_qkv(state, prefix, seq)))


def _norm(state: ModelState, prefix: str, x: Tensor) -> Tensor:
    return F.layer_norm(x, state.params[f"{prefix}.gamma"], state.params[f"{prefix}.beta"])


def _divided_attention(state: ModelState, prefix: str, x: Tensor, cls: Tensor, axis: str) -> tuple[Tensor, Tensor]:
    """Attention across time (same patch) or space (same frame).

    The CLS key and value join every group; the CLS query attends once over its
    own key and all tokens. x [N,T,P,D], cls [N,D]. Returns the residual updates.
    """
    n, t, np_, d = x.shape
    xn = _norm(state, f"{prefix}.norm", x)
    cn = _norm(state, f"{prefix}.norm", cls)
    groups = xn.transpose(0, 2, 1, 3) if axis == "time" else xn  # [N, G, L, D]
    _, g, length, _ = groups.shape
    cls_tok = expand(cn.reshape(n, 1, 1, d), (n, g, 1, d))
    q, k, v = _qkv(state, prefix, concat([cls_tok, groups], axis=2))  # [N, G, A, L+1, D_h]
    tok = _merge_heads(state, prefix, F.attention(q, k, v))[:, :, 1:]
    a, dh = q.shape[2], q.shape[4]

    def everything(z):  # own CLS entry, then every token across groups: [N, A, 1 + G*L, D_h]
        rest = z[:, :, :, 1:].transpose(0, 2, 1, 3, 4).reshape(n, a, g * length, dh)
        return concat([z[:, 0, :, :1], rest], axis=2)

    cls_out = _merge_heads(state, prefix, F.attention(q[:, 0, :, :1], everything(k), everything(v)))
    if axis == "time":
        tok = tok.transpose(0, 2, 1, 3)
    return tok, cls_out.reshape(n, d)


def timesformer_layer(state: ModelState, i: int, x: Tensor, cls: Tensor) -> tuple[Tensor, Tensor]:
    p = state.params
    dx, dc = _divided_attention(state, f"blk{i}.t", x, cls, "time")
    x, cls = x + dx, cls + dc
    dx, dc = _divided_attention(state, f"blk{i}.s", x, cls, "space")
    x, cls = x + dx, cls + dc
    n, t, np_, d = x.shape
    tokens = concat([cls.reshape(n, 1, d), x.reshape(n, t * np_, d)], axis=1)
    hid = F.linear(_norm(state, f"blk{i}.ff.norm", tokens), p[f"blk{i}.ff.w1"], p[f"blk{i}.ff.b1"])
    gate, val = hid[..., : 4 * d], hid[..., 4 * d:]
    tokens = tokens + F.linear(F.gelu(gate) * val, p[f"blk{i}.ff.w2"], p[f"blk{i}.ff.b2"])
    return tokens[:, 1:].reshape(n, t, np_, d), tokens[:, 0]


def forward_timesformer(state: ModelState, clip: Tensor, training: bool = False) -> Tensor:
    cfg = state.config
    if cfg.family != "TimeSformer":
        raise ValueError(f"forward_timesformer called on a {cfg.family} model")
    _check_clip(state, clip)
    p = state.params
    x = F.linear(patchify(clip, cfg.patch_size), p["embed.w"], p["embed.b"])
    n = x.shape[0]
    cls = expand(p["cls"].reshape(1, -1), (n, cfg.model_dim))
    for i in range(cfg.depth):
        x, cls = timesformer_layer(state, i, x, cls)
    return F.linear(_norm(state, "norm", cls), p["fc.w"], p["fc.b"])


_FORWARD = {"ConvLSTM": forward_convlstm, "CNN3D": forward_cnn3d, "TimeSformer": forward_timesformer}


def forward(state: ModelState, clip: Tensor, training: bool = False) -> Tensor:
    return _FORWARD[state.config.family](state, clip, training)
