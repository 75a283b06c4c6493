"""Parameter containers and the conv-layer helper used by every block."""
from __future__ import annotations

import math
from typing import Dict, Optional

import numpy as np

from . import ops
from .errors import StructuralError
from .tensor import Tensor

ModelWeights = Dict[str, Tensor]


class ParamInit:
    """Collects freshly initialised parameters in insertion order."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.params: ModelWeights = {}

    def _add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise StructuralError(f"duplicate parameter {name!r}")
        self.params[name] = Tensor(value.astype(np.float32), requires_grad=True, name=name)

    def conv(self, name: str, in_c: int, out_c: int, k: int = 3, zero: bool = False) -> None:
        # Kaiming fan-in for leaky-ReLU(0.1) layers
        fan_in = in_c * k * k
        std = math.sqrt(2.0 / ((1 + ops.LEAKY_SLOPE ** 2) * fan_in))
        if zero:
            w = np.zeros((out_c, in_c, k, k))
        else:
            w = self.rng.normal(0.0, std, size=(out_c, in_c, k, k))
        self._add(f"{name}.weight", w)
        self._add(f"{name}.bias", np.zeros((1, out_c, 1, 1)))


def param(params: ModelWeights, name: str) -> Tensor:
    try:
        return params[name]
    except KeyError:
        raise StructuralError(f"missing parameter {name!r}") from None


def conv(params: ModelWeights, name: str, x: Tensor, stride: int = 1, dilation: int = 1,
         padding: Optional[int] = None) -> Tensor:
    """Apply the conv layer ``name``; default padding keeps the spatial size at stride 1."""
    kernel = param(params, f"{name}.weight")
    if padding is None:
        padding = dilation * (kernel.shape[2] // 2)
    return ops.conv2d(x, kernel, params.get(f"{name}.bias"), stride, dilation, padding)


def count_parameters(weights: ModelWeights) -> int:
    return int(sum(int(np.prod(t.shape)) for t in weights.values()))


def subset(weights: ModelWeights, prefix: str) -> ModelWeights:
    return {k: v for k, v in weights.items() if k.startswith(prefix)}
