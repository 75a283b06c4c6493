"""PSNR and SSIM in the linear and mu-law tone-mapped domains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .preprocess import MU, tone_map_array


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR with peak 1; identical inputs give ``inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian(window: int, sigma: float) -> np.ndarray:
    x = np.arange(window) - (window - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=-1) @ g
    return sliding_window_view(rows, k, axis=-2) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Gaussian-windowed SSIM averaged over valid pixels and channels.

    Inputs are ``(H, W)`` or any leading shape ending in ``(H, W)``.
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or min(a.shape[-2:]) < window:
        raise ShapeError(f"SSIM needs spatial dims >= {window}, got {a.shape}")
    g = _gaussian(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr_mu(pred, gt, mu: float = MU) -> float:
    return psnr(tone_map_array(pred, mu), tone_map_array(gt, mu))


def ssim_mu(pred, gt, mu: float = MU) -> float:
    return ssim(tone_map_array(pred, mu), tone_map_array(gt, mu))


def evaluate_pair(pred, gt, mu: float = MU) -> dict:
    return {
        "psnr_mu": psnr_mu(pred, gt, mu),
        "psnr_l": psnr(pred, gt),
        "ssim_mu": ssim_mu(pred, gt, mu),
        "ssim_l": ssim(pred, gt),
    }


METRIC_KEYS = ("psnr_mu", "psnr_l", "ssim_mu", "ssim_l")


@dataclass
class EvalReport:
    samples: list = field(default_factory=list)   # (name, metrics dict)

    def add(self, name: str, metrics: dict) -> None:
        self.samples.append((name, dict(metrics)))

    @property
    def mean(self) -> dict:
        if not self.samples:
            return {k: float("nan") for k in METRIC_KEYS}
        return {k: float(np.mean([m[k] for _, m in self.samples])) for k in METRIC_KEYS}

    def to_text(self) -> str:
        """Blank-line separated ``key = value`` records; the last record holds the means."""
        blocks = []
        for name, m in self.samples:
            lines = [f"sample = {name}"] + [f"{k} = {_fmt(m[k])}" for k in METRIC_KEYS]
            blocks.append("\n".join(lines))
        mean = self.mean
        blocks.append("\n".join(["sample = mean", f"count = {len(self.samples)}"]
                                + [f"{k} = {_fmt(mean[k])}" for k in METRIC_KEYS]))
        return "\n\n".join(blocks) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        report = cls()
        for block in text.strip().split("\n\n"):
            rec = dict(line.split(" = ", 1) for line in block.splitlines() if " = " in line)
            if rec.get("sample") == "mean":
                continue
            report.add(rec["sample"], {k: float(rec[k]) for k in METRIC_KEYS})
        return report


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"
