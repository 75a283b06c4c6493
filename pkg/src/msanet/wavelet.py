"""Orthonormal Haar transforms and the wavelet-domain feature blocks.

Subband convention on each 2x2 block ``[[a, b], [c, d]]``::

    ll = (a + b + c + d) / 2      lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2      hh = (a - b - c + d) / 2

The packed layout used inside the network is the channel concatenation
``[ll, lh, hl, hh]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import ModelWeights, ParamInit, conv, param
from .tensor import Tensor, record

ATTENTION_RATIO = 4


@dataclass
class WaveletSubbands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))


def _analysis(x: np.ndarray) -> np.ndarray:
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    half = x.dtype.type(0.5)
    return np.concatenate(
        [(a + b + c + d) * half, (a + b - c - d) * half, (a - b + c - d) * half, (a - b - c + d) * half],
        axis=1,
    )


def _synthesis(s: np.ndarray) -> np.ndarray:
    n, c4, h, w = s.shape
    c = c4 // 4
    ll, lh, hl, hh = (s[:, i * c:(i + 1) * c] for i in range(4))
    half = s.dtype.type(0.5)
    out = np.empty((n, c, 2 * h, 2 * w), dtype=s.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * half
    out[:, :, 0::2, 1::2] = (ll + lh - hl - hh) * half
    out[:, :, 1::2, 0::2] = (ll - lh + hl - hh) * half
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * half
    return out


def haar_analysis(x: Tensor) -> Tensor:
    """Packed single-level Haar DWT: ``(B, C, H, W) -> (B, 4C, H/2, W/2)``."""
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2d needs even spatial dims, got {h}x{w}")
    # orthonormal: the adjoint is the inverse
    return record("haar_analysis", (x,), _analysis(x.data), lambda g: (_synthesis(g),))


def haar_synthesis(s: Tensor) -> Tensor:
    if s.shape[1] % 4:
        raise ShapeError(f"packed subbands need a multiple of 4 channels, got {s.shape[1]}")
    return record("haar_synthesis", (s,), _synthesis(s.data), lambda g: (_analysis(g),))


def dwt2d(x: Tensor) -> WaveletSubbands:
    return WaveletSubbands(*ops.split_channels(haar_analysis(x), 4))


def idwt2d(subbands: WaveletSubbands) -> Tensor:
    parts = list(subbands)
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise ShapeError("wavelet subbands must share one shape")
    return haar_synthesis(ops.concat_channels(parts))


# -- learned blocks ----------------------------------------------------------

def init_channel_attention(init: ParamInit, name: str, channels: int, ratio: int = ATTENTION_RATIO):
    if channels % ratio:
        raise ConfigError(f"channels ({channels}) must be divisible by the attention ratio ({ratio})")
    init.conv(f"{name}.down", channels, channels // ratio, k=1)
    init.conv(f"{name}.up", channels // ratio, channels, k=1)


def channel_attention(x: Tensor, weights: ModelWeights, name: str = "ca") -> Tensor:
    """Squeeze-and-excitation gating: scale each channel by a learned sigmoid gate."""
    down = param(weights, f"{name}.down.weight")
    if x.shape[1] % down.shape[0]:
        raise ConfigError("channel count not divisible by the attention reduction ratio")
    pooled = ops.global_avg_pool(x)
    gate = ops.leaky_relu(conv(weights, f"{name}.down", pooled))
    gate = ops.sigmoid(conv(weights, f"{name}.up", gate))
    return ops.mul(x, gate)


def init_d_wavenet(init: ParamInit, name: str, channels: int, use_dwt: bool = True) -> None:
    width = 4 * channels if use_dwt else channels
    init.conv(f"{name}.l1", width, width)
    init.conv(f"{name}.l2", 2 * width, width)
    init.conv(f"{name}.l3", 3 * width, width)
    init_channel_attention(init, f"{name}.ca", channels)


def d_wavenet(x: Tensor, weights: ModelWeights, name: str = "dw", use_dwt: bool = True) -> Tensor:
    """Dense dilated conv stack in the Haar domain with attention and a residual.

    With ``use_dwt=False`` the same dense stack runs directly on the spatial
    features (the ablation variant).
    """
    h, w = x.shape[2:]
    inner = x
    if use_dwt:
        inner = ops.pad_reflect(x, h % 2, w % 2)
        inner = haar_analysis(inner)
    l1 = ops.leaky_relu(conv(weights, f"{name}.l1", inner, dilation=1))
    l2 = ops.leaky_relu(conv(weights, f"{name}.l2", ops.concat_channels([inner, l1]), dilation=2))
    l3 = ops.leaky_relu(conv(weights, f"{name}.l3", ops.concat_channels([inner, l1, l2]), dilation=3))
    y = l3
    if use_dwt:
        y = ops.crop(haar_synthesis(l3), h, w)
    return ops.add(channel_attention(y, weights, f"{name}.ca"), x)


def init_group_wavenet(init: ParamInit, name: str, channels: int, use_dwt: bool = True) -> None:
    init_d_wavenet(init, f"{name}.dw1", channels, use_dwt)
    init_d_wavenet(init, f"{name}.dw2", channels, use_dwt)
    init.conv(f"{name}.fuse", 2 * channels, channels)


def group_wavenet(x: Tensor, weights: ModelWeights, name: str = "gw", use_dwt: bool = True) -> Tensor:
    y = d_wavenet(x, weights, f"{name}.dw1", use_dwt)
    y = d_wavenet(y, weights, f"{name}.dw2", use_dwt)
    return conv(weights, f"{name}.fuse", ops.concat_channels([x, y]))
