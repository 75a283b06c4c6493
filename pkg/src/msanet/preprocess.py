"""Gamma linearization, input stack assembly and mu-law tone mapping."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .errors import DomainError, ShapeError
from .tensor import Tensor

GAMMA = 2.2
MU = 5000.0
REFERENCE_INDEX = 1


@dataclass
class ExposureStack:
    """Three LDR frames (low, medium, high exposure) of one scene.

    ``images`` are ``(B, 3, H, W)`` arrays in [0, 1]. The medium exposure
    (index 1) is the reference the output is aligned to.
    """

    images: Sequence[np.ndarray]
    exposure_times: Sequence[float]
    reference_index: int = REFERENCE_INDEX

    def __post_init__(self):
        self.images = [np.clip(_as4d(im), 0.0, 1.0).astype(np.float32) for im in self.images]
        self.exposure_times = [float(t) for t in self.exposure_times]
        if len(self.images) != 3 or len(self.exposure_times) != 3:
            raise ShapeError("an exposure stack holds exactly three frames")
        if self.reference_index != REFERENCE_INDEX:
            raise DomainError("the reference frame is the medium exposure (index 1)")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise ShapeError(f"frames differ in shape: {sorted(shapes)}")
        if self.images[0].shape[1] != 3:
            raise ShapeError("LDR frames must have 3 channels")
        t = self.exposure_times
        if any(v <= 0 for v in t):
            raise DomainError("exposure times must be positive")
        if not t[0] < t[1] < t[2]:
            raise DomainError(f"exposure times must be strictly increasing, got {t}")

    @classmethod
    def from_ev(cls, images, evs) -> "ExposureStack":
        return cls(images, [2.0 ** float(ev) for ev in evs])


def _as4d(image) -> np.ndarray:
    a = np.asarray(image)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ShapeError(f"expected (3, H, W) or (B, 3, H, W), got {a.shape}")
    return a


def linearize(image, t: float, gamma: float = GAMMA) -> np.ndarray:
    """``image ** gamma / t`` elementwise."""
    if t <= 0:
        raise DomainError(f"exposure time must be positive, got {t}")
    if gamma < 1:
        raise DomainError(f"gamma must be >= 1, got {gamma}")
    image = np.asarray(image)
    return (np.power(image, gamma) / t).astype(image.dtype if image.dtype.kind == "f" else np.float32)


def delinearize(radiance, t: float, gamma: float = GAMMA) -> np.ndarray:
    """Render an LDR frame from linear radiance: ``(radiance * t) ** (1 / gamma)``, clipped."""
    if t <= 0:
        raise DomainError(f"exposure time must be positive, got {t}")
    return np.clip(np.power(np.asarray(radiance, dtype=np.float64) * t, 1.0 / gamma), 0.0, 1.0)


def build_input(stack: ExposureStack, gamma: float = GAMMA) -> list:
    """Return the three 6-channel inputs ``[LDR, linearized LDR]`` as arrays."""
    return [
        np.concatenate([im, linearize(im, t, gamma)], axis=1)
        for im, t in zip(stack.images, stack.exposure_times)
    ]


def tone_map(image: Tensor, mu: float = MU) -> Tensor:
    """Differentiable mu-law compression ``log(1 + mu x) / log(1 + mu)``."""
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    if np.any(image.data < 0):
        raise DomainError("tone_map input must be non-negative")
    return ops.scale(ops.log(ops.add_scalar(ops.scale(image, mu), 1.0)), 1.0 / math.log1p(mu))


def tone_map_array(image, mu: float = MU) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if np.any(image < 0):
        raise DomainError("tone_map input must be non-negative")
    return np.log1p(mu * image) / math.log1p(mu)
