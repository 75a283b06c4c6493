"""Sampling-and-aggregation alignment for one scale.

A small conv net predicts N displacement fields per pixel. The non-reference
features are read at each displaced position, and the N candidates are
blended with softmax weights given by their dot product with the reference
feature at that pixel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import ModelWeights, ParamInit, conv
from .tensor import Tensor


@dataclass
class SamplingMap:
    """N displacement fields packed as a ``(B, 2N, H, W)`` tensor.

    Channels ``2i`` and ``2i + 1`` hold the row (dy) and column (dx)
    displacement of sample ``i``, in pixels of the current scale.
    """

    offsets: Tensor

    @property
    def num_samples(self) -> int:
        return self.offsets.shape[1] // 2

    def field(self, i: int) -> Tensor:
        return ops.slice_channels(self.offsets, 2 * i, 2 * i + 2)

    def as_array(self) -> np.ndarray:
        """``(B, N, H, W, 2)`` view with the last axis ordered (dy, dx)."""
        b, c, h, w = self.offsets.shape
        return self.offsets.data.reshape(b, c // 2, 2, h, w).transpose(0, 1, 3, 4, 2)

    @classmethod
    def zeros(cls, batch: int, num_samples: int, height: int, width: int, dtype=np.float32):
        return cls(Tensor(np.zeros((batch, 2 * num_samples, height, width), dtype=dtype)))


def init_generator(init: ParamInit, name: str, channels: int, num_samples: int) -> None:
    init.conv(f"{name}.g1", 2 * channels + 2 * num_samples, channels)
    init.conv(f"{name}.g2", channels, channels)
    init.conv(f"{name}.g3", channels, channels)
    # zero head: training starts from identity sampling
    init.conv(f"{name}.g4", channels, 2 * num_samples, zero=True)


def prior_input(prior: Optional[SamplingMap], batch: int, num_samples: int, height: int,
                width: int, dtype=np.float32) -> Tensor:
    """Generator prior channels: zeros at the coarsest scale, else the coarser map
    upsampled x2 with displacements doubled to the finer pixel grid."""
    if prior is None:
        return SamplingMap.zeros(batch, num_samples, height, width, dtype).offsets
    ph, pw = prior.offsets.shape[2:]
    if (2 * ph, 2 * pw) != (height, width):
        raise ShapeError(f"prior map {ph}x{pw} is not half of {height}x{width}")
    return ops.scale(ops.upsample_bilinear_x2(prior.offsets), 2.0)


def generate_sampling_map(f_nonref: Tensor, f_ref: Tensor, prior: Optional[SamplingMap],
                          weights: ModelWeights, name: str = "sam",
                          num_samples: Optional[int] = None) -> SamplingMap:
    if f_nonref.shape != f_ref.shape:
        raise ShapeError(f"feature shapes differ: {f_nonref.shape} vs {f_ref.shape}")
    if num_samples is None:
        num_samples = weights[f"{name}.g4.weight"].shape[0] // 2
    b, _, h, w = f_ref.shape
    p = prior_input(prior, b, num_samples, h, w, f_ref.dtype)
    x = ops.concat_channels([f_nonref, f_ref, p])
    x = ops.leaky_relu(conv(weights, f"{name}.g1", x))
    x = ops.leaky_relu(conv(weights, f"{name}.g2", x))
    x = ops.leaky_relu(conv(weights, f"{name}.g3", x))
    return SamplingMap(conv(weights, f"{name}.g4", x))


def sample_features(f_nonref: Tensor, sampling_map: SamplingMap) -> list:
    return [ops.grid_sample_bilinear(f_nonref, sampling_map.field(i))
            for i in range(sampling_map.num_samples)]


def correspondence_weights(samples, f_ref: Tensor) -> Tensor:
    """Softmax of per-pixel channel dot products; returns ``(B, N, H, W)``."""
    for s in samples:
        if s.shape != f_ref.shape:
            raise ShapeError(f"sample shape {s.shape} differs from reference {f_ref.shape}")
    scores = ops.concat_channels([ops.sum_channels(ops.mul(s, f_ref)) for s in samples])
    return ops.softmax_over_samples(scores)


def aggregate(samples, weights: Tensor) -> Tensor:
    if weights.shape[1] != len(samples):
        raise ShapeError(f"{weights.shape[1]} weight maps for {len(samples)} samples")
    out = None
    for i, s in enumerate(samples):
        term = ops.mul(s, ops.slice_channels(weights, i, i + 1))
        out = term if out is None else ops.add(out, term)
    return out


def align_scale(f_nonref: Tensor, f_ref: Tensor, prior: Optional[SamplingMap],
                weights: ModelWeights, name: str = "sam", num_samples: Optional[int] = None,
                trace: Optional[list] = None):
    """Align ``f_nonref`` to ``f_ref``; returns ``(aligned, sampling_map)``."""
    smap = generate_sampling_map(f_nonref, f_ref, prior, weights, name, num_samples)
    samples = sample_features(f_nonref, smap)
    w = correspondence_weights(samples, f_ref)
    aligned = aggregate(samples, w)
    if trace is not None:
        trace.append({"name": name, "map": smap, "samples": samples, "weights": w, "aligned": aligned})
    return aligned, smap
