"""Seeded synthetic exposure stacks with a moving foreground.

Each scene is a smooth background (a sum of Gaussian bumps) plus a striped
foreground patch. Radiance is laid out on a log scale spanning
``DECADES`` orders of magnitude below 1 so that the dark end is quantised
coarsely in the reference frame. The two non-reference frames see the
foreground translated by a seeded integer shift; the ground truth is the
reference-aligned scene.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DomainError
from .io import write_keyvalues, write_sample
from .preprocess import GAMMA, delinearize

EVS = (-2.0, 0.0, 2.0)
DECADES = 2.5
N_BUMPS = 6


def _log_radiance(u: np.ndarray) -> np.ndarray:
    return np.power(10.0, -DECADES * (1.0 - np.clip(u, 0.0, 1.0)))


def _background(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = np.zeros((3, size, size))
    for _ in range(N_BUMPS):
        cy, cx = rng.uniform(-0.2, 1.2, size=2) * size
        sigma = rng.uniform(0.15, 0.45) * size
        amp = rng.uniform(0.1, 1.0, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        field += amp[:, None, None] * bump
    field -= field.min()
    field /= max(field.max(), 1e-12)
    return _log_radiance(field)


def _foreground(rng, patch: int) -> np.ndarray:
    yy, xx = np.mgrid[0:patch, 0:patch].astype(np.float64)
    freq = rng.uniform(0.04, 0.12, size=2) * rng.choice([-1, 1], size=2)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx) + phase)
    color = rng.uniform(0.3, 1.0, size=3)
    offset = rng.uniform(0.0, 0.3)
    return _log_radiance(offset + (1 - offset) * color[:, None, None] * stripes)


def _paste(background, patch, top, left):
    out = background.copy()
    p = patch.shape[1]
    out[:, top:top + p, left:left + p] = patch
    return out


def make_sample(rng: np.random.Generator, size: int, max_shift: int, gamma: float = GAMMA) -> dict:
    """Render one scene; returns float and 8-bit LDRs, the GT and the shifts."""
    if size % 4:
        raise DomainError(f"size must be divisible by 4, got {size}")
    if not 0 <= max_shift < size / 4:
        raise DomainError(f"max_shift must be in [0, size/4), got {max_shift}")
    bg = _background(rng, size)
    p = int(rng.integers(size // 4, size // 2 + 1))
    patch = _foreground(rng, p)
    top = int(rng.integers(max_shift, size - p - max_shift + 1))
    left = int(rng.integers(max_shift, size - p - max_shift + 1))
    shifts = [(0, 0)] * 3
    if max_shift:
        shifts = [tuple(int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2)) for _ in range(3)]
        shifts[1] = (0, 0)
    gt = _paste(bg, patch, top, left)
    ldr_float, ldr = [], []
    for (dy, dx), ev in zip(shifts, EVS):
        radiance = _paste(bg, patch, top + dy, left + dx)
        frame = delinearize(radiance, 2.0 ** ev, gamma)
        ldr_float.append(frame)
        ldr.append(np.round(frame * 255) / 255)
    return {
        "gt": gt.astype(np.float32),
        "ldr": [x.astype(np.float32) for x in ldr],
        "ldr_float": ldr_float,
        "evs": list(EVS),
        "shifts": shifts,
        "box": (top, left, p),
    }


def gen_synthetic(out_dir, count: int, size: int, max_shift: int, seed: int = 0) -> list:
    """Write ``count`` sample directories under ``out_dir``; returns the in-memory samples."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(count):
        sample = make_sample(rng, size, max_shift)
        d = out / f"sample_{i:04d}"
        write_sample(d, sample["ldr"], sample["evs"], sample["gt"])
        top, left, p = sample["box"]
        write_keyvalues(d / "meta.txt", {
            "shift_0": "%d %d" % sample["shifts"][0],
            "shift_2": "%d %d" % sample["shifts"][2],
            "foreground": f"{top} {left} {p}",
        })
        samples.append(sample)
    return samples
