"""Inter-scale fusion of aligned features (fine stream + upsampled coarse stream)."""
from __future__ import annotations

import numpy as np

from . import ops
from .errors import InvariantError, ShapeError, UsageError
from .nn import ModelWeights, ParamInit, conv
from .tensor import Tensor

FUSION_MODES = ("mask", "add", "concat")
POOL_WINDOW = 3


def init_fusion(init: ParamInit, name: str, channels: int, mode: str = "mask") -> None:
    if mode == "mask":
        init.conv(f"{name}.mask", 4 * channels, 1)
    elif mode == "concat":
        init.conv(f"{name}.merge", 2 * channels, channels)
    elif mode != "add":
        raise UsageError(f"unknown fusion mode {mode!r}")


def compute_fusion_mask(f_fine: Tensor, f_coarse_up: Tensor, weights: ModelWeights,
                        name: str = "iam") -> Tensor:
    """Single-channel sigmoid mask from avg/max-pooled local statistics of both streams."""
    if f_fine.shape != f_coarse_up.shape:
        raise ShapeError(f"fusion inputs differ: {f_fine.shape} vs {f_coarse_up.shape}")
    pooled = []
    for f in (f_fine, f_coarse_up):
        pooled.append(ops.pool2d(f, "avg", POOL_WINDOW, 1, POOL_WINDOW // 2))
        pooled.append(ops.pool2d(f, "max", POOL_WINDOW, 1, POOL_WINDOW // 2))
    return ops.sigmoid(conv(weights, f"{name}.mask", ops.concat_channels(pooled)))


def fuse(f_fine: Tensor, f_coarse_up: Tensor, mask: Tensor) -> Tensor:
    """``(1 - M) * fine + M * coarse``, written as ``fine + M * (coarse - fine)``."""
    if f_fine.shape != f_coarse_up.shape:
        raise ShapeError(f"fusion inputs differ: {f_fine.shape} vs {f_coarse_up.shape}")
    if mask.shape[2:] != f_fine.shape[2:] or mask.shape[1] not in (1, f_fine.shape[1]):
        raise ShapeError(f"mask shape {mask.shape} does not fit {f_fine.shape}")
    if np.any(mask.data < 0) or np.any(mask.data > 1):
        raise InvariantError("fusion mask values must lie in [0, 1]")
    return ops.add(f_fine, ops.mul(mask, ops.sub(f_coarse_up, f_fine)))


def fuse_scales(f_fine: Tensor, f_coarse_up: Tensor, weights: ModelWeights, name: str,
                mode: str = "mask") -> Tensor:
    if mode == "mask":
        return fuse(f_fine, f_coarse_up, compute_fusion_mask(f_fine, f_coarse_up, weights, name))
    if mode == "add":
        return ops.add(f_fine, f_coarse_up)
    if mode == "concat":
        return ops.leaky_relu(conv(weights, f"{name}.merge", ops.concat_channels([f_fine, f_coarse_up])))
    raise UsageError(f"unknown fusion mode {mode!r}")
