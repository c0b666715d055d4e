"""APC encoder/decoder, the clip-level event classifier, and their losses."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .errors import ContractError, EmptyTargets, ShapeError
from .numerics import layers
from .numerics.params import ParamSet
from .numerics.tensor import Tensor, as_tensor, clip, log, mul, relu, reshape, sigmoid, tabs, transpose

EPS_P = 1e-7

PAPER_KERNELS = ((3, 3), (3, 3), (3, 3), (3, 1), (3, 1))
PAPER_STRIDES = ((2, 2), (2, 2), (2, 1), (2, 1), (2, 1))


@dataclass(frozen=True)
class ApcConfig:
    conv_kernels: Tuple[Tuple[int, int], ...] = PAPER_KERNELS
    conv_strides: Tuple[Tuple[int, int], ...] = PAPER_STRIDES
    conv_channels: Tuple[int, ...] = (32, 32, 64, 64, 64)
    lstm_units: int = 64
    n_shift: int = 3
    input_mels: int = 20
    decoder_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_kernels", tuple(tuple(k) for k in self.conv_kernels))
        object.__setattr__(self, "conv_strides", tuple(tuple(s) for s in self.conv_strides))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        n = len(self.conv_kernels)
        if n != 5 or len(self.conv_strides) != 5 or len(self.conv_channels) != 5:
            raise ContractError("the encoder has exactly 5 conv layers")
        if self.lstm_units <= 0 or self.n_shift < 1 or self.input_mels <= 0:
            raise ContractError("lstm_units, input_mels must be positive and n_shift >= 1")

    @property
    def time_stride_total(self) -> int:
        return int(np.prod([s[0] for s in self.conv_strides]))

    def output_shape(self, n_frames: int, n_mels: int = None):
        """(T', mel') after the conv stack, using ceil-mode lengths."""
        t, f = n_frames, self.input_mels if n_mels is None else n_mels
        for (_, _), (st, sf) in zip(self.conv_kernels, self.conv_strides):
            t, f = -(-t // st), -(-f // sf)
        return t, f

    def lstm_input_dim(self) -> int:
        return self.conv_channels[-1] * self.output_shape(1)[1]


@dataclass(frozen=True)
class ClassifierConfig:
    lstm_units: int = 96
    scale_c: float = 2.0
    thresholds: Sequence[float] = field(default=())

    def __post_init__(self):
        if self.scale_c <= 0:
            raise ContractError("scale_c must be positive")
        if self.lstm_units <= 0:
            raise ContractError("lstm_units must be positive")


def init_apc(config: ApcConfig, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    entries, tags = {}, {}
    c_in = 1
    for i, (k, c_out) in enumerate(zip(config.conv_kernels, config.conv_channels)):
        w, b = layers.init_conv(rng, c_out, c_in, *k)
        entries[f"enc.conv{i}.w"], entries[f"enc.conv{i}.b"] = w, b
        c_in = c_out
    wx, wh, b = layers.init_lstm(rng, config.lstm_input_dim(), config.lstm_units)
    entries.update({"enc.lstm.wx": wx, "enc.lstm.wh": wh, "enc.lstm.b": b})
    for k in entries:
        tags[k] = "enc"
    k = config.decoder_kernel
    entries["dec.conv.w"] = layers.glorot_uniform(
        rng, (config.input_mels, config.lstm_units, k), config.lstm_units * k, config.input_mels * k)
    entries["dec.conv.b"] = np.zeros(config.input_mels)
    tags["dec.conv.w"] = tags["dec.conv.b"] = "dec"
    return ParamSet(entries, tags)


def init_classifier(apc: ApcConfig, config: ClassifierConfig, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    wx, wh, b = layers.init_lstm(rng, apc.lstm_units, config.lstm_units)
    dw, db = layers.init_dense(rng, config.lstm_units, 1)
    entries = {"cls.lstm.wx": wx, "cls.lstm.wh": wh, "cls.lstm.b": b, "cls.dense.w": dw, "cls.dense.b": db}
    return ParamSet(entries, {k: "cls" for k in entries})


def _tensors(params):
    if isinstance(params, ParamSet):
        return params.constants()
    return params


def _batch(x):
    x = as_tensor(x)
    if x.ndim == 2:
        x = reshape(x, (1,) + x.shape)
    return x


def encode(x, params, config: ApcConfig) -> Tensor:
    """(N, T, M) or (T, M) log-mel input -> latent sequence h of shape (N, T', m)."""
    p = _tensors(params)
    x = _batch(x)
    if x.shape[2] != config.input_mels:
        raise ShapeError(f"input has {x.shape[2]} mel bins, encoder expects {config.input_mels}")
    n, t, m = x.shape
    z = reshape(x, (n, 1, t, m))
    for i, stride in enumerate(config.conv_strides):
        z = relu(layers.conv2d(z, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride))
    _, c, tp, fp = z.shape
    z = reshape(transpose(z, (0, 2, 1, 3)), (n, tp, c * fp))
    return layers.lstm_sequence(z, p["enc.lstm.wx"], p["enc.lstm.wh"], p["enc.lstm.b"])


def decode(h, params) -> Tensor:
    """Predict future LFBE frames from latents: one same-padded Conv1D, m -> M channels."""
    p = _tensors(params)
    h = _batch(h)
    w = p["dec.conv.w"]
    if h.shape[2] != w.shape[1]:
        raise ShapeError(f"latent dim {h.shape[2]} does not match decoder input {w.shape[1]}")
    return layers.conv1d(h, w, p["dec.conv.b"])


def apc_targets(x, n_shift: int, time_stride_total: int):
    """Future-frame targets for every encoder step, plus the validity mask.

    Step j is anchored at input frame j * time_stride_total and predicts frame
    j * time_stride_total + n_shift. Steps whose target lies past the end of
    the input are masked. Returns (targets (N, T', M), mask (N, T')).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    t = x.shape[1]
    steps = -(-t // time_stride_total)
    idx = np.arange(steps) * time_stride_total + n_shift
    valid = idx <= t - 1
    if not valid.any():
        raise EmptyTargets(f"n_shift={n_shift} leaves no target inside {t} frames")
    targets = np.zeros((x.shape[0], steps, x.shape[2]))
    targets[:, valid] = x[:, idx[valid]]
    mask = np.broadcast_to(valid, (x.shape[0], steps)).astype(np.float64)
    if squeeze:
        return targets[0], mask[0]
    return targets, mask


def apc_loss(y, t, mask=None) -> Tensor:
    """Summed L1 distance between predictions and targets over unmasked steps."""
    y = as_tensor(y)
    t = np.asarray(t, dtype=np.float64)
    if y.shape != t.shape:
        raise ShapeError(f"prediction {y.shape} vs target {t.shape}")
    diff = tabs(y - t)
    if mask is not None:
        diff = mul(diff, np.asarray(mask, dtype=np.float64)[..., None])
    return diff.sum()


def apc_forward_loss(params, x, config: ApcConfig) -> Tensor:
    """apc_loss(decode(encode(x))) against the shifted targets of x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    t, mask = apc_targets(x, config.n_shift, config.time_stride_total)
    y = decode(encode(x, params, config), params)
    return apc_loss(y, t, mask)


def classify(h, params) -> Tensor:
    """Clip-level event probability from the final state of an LSTM over h; shape (N,)."""
    p = _tensors(params)
    h = _batch(h)
    if h.shape[1] == 0:
        raise ContractError("classify needs a non-empty latent sequence")
    hs = layers.lstm_sequence(h, p["cls.lstm.wx"], p["cls.lstm.wh"], p["cls.lstm.b"])
    last = hs[:, -1, :]
    logit = layers.dense(last, p["cls.dense.w"], p["cls.dense.b"])
    return sigmoid(reshape(logit, (h.shape[0],)))


def scaled_bce(p, z, c: float, eps: float = EPS_P, reduction: str = "sum") -> Tensor:
    """-[c z ln p + (1 - z) ln(1 - p)] with p clamped to [eps, 1 - eps]."""
    if c <= 0:
        raise ContractError(f"positive-class scale must be > 0, got {c}")
    p = clip(as_tensor(p), eps, 1.0 - eps)
    z = np.asarray(z, dtype=np.float64)
    if np.any((z != 0) & (z != 1)):
        raise ContractError("labels must be 0 or 1")
    loss = -(mul(log(p), c * z) + mul(log(1.0 - p), 1.0 - z))
    if reduction == "none":
        return loss
    if reduction == "mean":
        return loss.mean()
    return loss.sum()


def apc_batch_loss(params, batch, config: ApcConfig, reduction: str = "sum") -> Tensor:
    """APC loss over a list of (T, M) feature arrays, summed or averaged per clip.

    Arrays of equal length are stacked and run together; a ragged batch is
    split into equal-length groups whose losses are added. With
    ``reduction="mean"`` the total is divided by the number of clips, so a
    minibatch step size does not depend on how many clips the batch holds.
    """
    if reduction not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {reduction!r}")
    groups = {}
    for x in batch:
        groups.setdefault(np.shape(x), []).append(x)
    total = None
    for shape in sorted(groups):
        loss = apc_forward_loss(params, np.stack(groups[shape]), config)
        total = loss if total is None else total + loss
    if total is None:
        raise ContractError("empty batch")
    if reduction == "mean":
        return mul(total, 1.0 / len(batch))
    return total


def encode_arrays(params: ParamSet, feats, config: ApcConfig, batch_size: int = 64):
    """Frozen-encoder latents for a list of (T, M) arrays, without building a graph."""
    consts = params.select("enc").constants()
    out = [None] * len(feats)
    order = sorted(range(len(feats)), key=lambda i: np.shape(feats[i]))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        shapes = {np.shape(feats[i]) for i in idx}
        for shape in sorted(shapes):
            sub = [i for i in idx if np.shape(feats[i]) == shape]
            h = encode(np.stack([feats[i] for i in sub]), consts, config).data
            for j, i in enumerate(sub):
                out[i] = h[j]
    return out
