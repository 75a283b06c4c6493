"""Shared-weight three-level feature pyramid."""
from __future__ import annotations

from . import ops
from .errors import ShapeError
from .nn import ModelWeights, ParamInit, conv
from .tensor import Tensor

SCALES = 3
IN_CHANNELS = 6


def init_encoder(init: ParamInit, channels: int, in_channels: int = IN_CHANNELS) -> None:
    for s in range(SCALES):
        init.conv(f"enc.s{s}.conv1", in_channels if s == 0 else channels, channels)
        init.conv(f"enc.s{s}.conv2", channels, channels)
        if s < SCALES - 1:
            init.conv(f"enc.down{s}", channels, channels)


def encode(x: Tensor, weights: ModelWeights) -> list:
    """Return ``[F1, F2, F3]`` at full, half and quarter resolution."""
    h, w = x.shape[2:]
    if h % 4 or w % 4:
        raise ShapeError(f"encoder input must be divisible by 4, got {h}x{w}")
    levels = []
    feat = x
    for s in range(SCALES):
        if s:
            feat = ops.leaky_relu(conv(weights, f"enc.down{s - 1}", feat, stride=2, padding=1))
        feat = ops.leaky_relu(conv(weights, f"enc.s{s}.conv1", feat))
        feat = ops.leaky_relu(conv(weights, f"enc.s{s}.conv2", feat))
        levels.append(feat)
    return levels
