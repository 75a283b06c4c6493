"""The gradient suite behind ``msanet gradcheck``.

Every differentiable op and every composite block is checked against
central differences on random inputs in [-1, 1]. Inputs to piecewise-linear
ops are nudged away from their kinks first, otherwise a finite-difference
step can straddle a kink and the comparison measures the kink, not the code.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import ops
from .encoder import encode, init_encoder
from .gradcheck import GradCheckReport, check_gradients
from .iam import fuse_scales, init_fusion
from .model import ModelConfig, forward, init_weights
from .nn import ParamInit
from .preprocess import tone_map
from .sam import align_scale, init_generator
from .tensor import Tensor
from .training import loss_tonemapped_l1
from .wavelet import (
    channel_attention,
    d_wavenet,
    dwt2d,
    group_wavenet,
    idwt2d,
    init_channel_attention,
    init_d_wavenet,
    init_group_wavenet,
)

OP_TOL = 1e-3
MODEL_TOL = 1e-2


@dataclass
class CheckResult:
    name: str
    tol: float
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed(self.tol)


def _away_from_zero(x, margin=2e-2):
    return np.where(np.abs(x) < margin, np.where(x < 0, -margin, margin), x)


def _spread(shape, rng, gap=5e-3):
    """Values in roughly [-1, 1] whose pairwise gaps exceed ``gap`` (stable argmax)."""
    n = int(np.prod(shape))
    vals = np.linspace(-1, 1, n) + rng.uniform(0, gap / 4, n)
    return rng.permutation(vals).reshape(shape)


def perturb_for_check(weights, rng) -> None:
    """Move a fresh initialisation to a generic point for finite differences.

    Zero biases put many pre-activations (and a zero sampling head puts every
    sample position) right on a kink; random biases and fractional offsets
    avoid that.
    """
    for name, p in weights.items():
        if name.endswith("g4.weight"):
            p.data[:] = rng.normal(0, 0.01, p.shape)
        elif name.endswith("g4.bias"):
            p.data[:] = rng.uniform(0.3, 0.7, p.shape) * rng.choice([-1, 1], p.shape)
        elif name.endswith(".bias"):
            p.data[:] = rng.uniform(-0.5, 0.5, p.shape)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(w.astype(out.dtype))))


def _params(weights):
    return {k: v.data.astype(np.float64) for k, v in weights.items()}


def _op_checks(rng) -> List[tuple]:
    u = lambda *s: rng.uniform(-1, 1, s)  # noqa: E731
    checks = []

    for stride, dilation, padding in ((1, 1, 1), (2, 1, 1), (1, 2, 2), (1, 3, 0)):
        out_hw = ops.conv_output_size(9, 3, stride, dilation, padding)
        w = rng.uniform(-1, 1, (2, 4, out_hw, out_hw))
        checks.append((f"conv2d s{stride} d{dilation} p{padding}",
                       lambda t, s=stride, d=dilation, p=padding, w=w:
                       _weighted(ops.conv2d(t["x"], t["k"], t["b"], s, d, p), w),
                       {"x": u(2, 3, 9, 9), "k": u(4, 3, 3, 3), "b": u(1, 4, 1, 1)}))

    # sample points kept off integer coordinates and inside the border
    frac = rng.uniform(0.15, 0.85, (1, 2, 6, 6)) * rng.choice([-1, 1], (1, 2, 6, 6))
    step = rng.integers(-1, 2, (1, 2, 6, 6))
    yy, xx = np.mgrid[0:6, 0:6]
    base = np.stack([yy, xx])[None]
    offs = np.clip(base + step + frac, 0.2, 4.8) - base
    w = u(1, 3, 6, 6)
    checks.append(("grid_sample_bilinear", lambda t, w=w: _weighted(ops.grid_sample_bilinear(t["x"], t["o"]), w),
                   {"x": u(1, 3, 6, 6), "o": offs}))

    w = u(2, 3, 4, 4)
    checks.append(("softmax_over_samples",
                   lambda t, w=w: _weighted(ops.softmax_over_samples(ops.scale(t["s"], 3.0)), w),
                   {"s": u(2, 3, 4, 4)}))
    for mode in ("avg", "max"):
        w = u(1, 2, 4, 4)
        checks.append((f"pool2d {mode}",
                       lambda t, m=mode, w=w: _weighted(ops.pool2d(t["x"], m, 3, 2, 1), w),
                       {"x": _spread((1, 2, 8, 8), rng)}))
    w = u(1, 2, 8, 10)
    checks.append(("upsample_bilinear_x2", lambda t, w=w: _weighted(ops.upsample_bilinear_x2(t["x"]), w),
                   {"x": u(1, 2, 4, 5)}))
    for kind in ("leaky_relu", "relu", "sigmoid"):
        w = u(1, 2, 4, 4)
        checks.append((f"activation {kind}", lambda t, k=kind, w=w: _weighted(ops.activation(t["x"], k), w),
                       {"x": _away_from_zero(u(1, 2, 4, 4))}))
    w = u(1, 5, 3, 3)
    checks.append(("concat_channels",
                   lambda t, w=w: _weighted(ops.concat_channels([t["a"], ops.mul(t["b"], t["b"])]), w),
                   {"a": u(1, 2, 3, 3), "b": u(1, 3, 3, 3)}))
    w = u(1, 2, 3, 4)
    checks.append(("pad_reflect + crop",
                   lambda t, w=w: _weighted(ops.crop(ops.pad_reflect(ops.mul(t["x"], t["x"]), 2, 1), 3, 4), w),
                   {"x": u(1, 2, 3, 4)}))
    w = u(1, 2, 3, 3)
    checks.append(("elementwise", lambda t, w=w: _weighted(
        ops.sub(ops.mul(t["a"], t["b"]), ops.log(ops.add_scalar(ops.absolute(t["a"]), 0.5))), w),
        {"a": _away_from_zero(u(1, 2, 3, 3)), "b": u(1, 1, 3, 3)}))
    checks.append(("global_avg_pool", lambda t: ops.sum(ops.mul(ops.global_avg_pool(t["x"]), ops.global_avg_pool(t["x"]))),
                   {"x": u(2, 3, 4, 4)}))
    return checks


def _composite_checks(rng) -> List[tuple]:
    u = lambda *s: rng.uniform(-1, 1, s)  # noqa: E731
    checks = []

    w = u(1, 2, 6, 8)
    checks.append(("dwt2d + idwt2d", lambda t, w=w: _weighted(idwt2d(dwt2d(ops.mul(t["x"], t["x"]))), w)
                   + _weighted(dwt2d(t["x"]).hh, w[..., :3, :4]), {"x": u(1, 2, 6, 8)}))

    w = u(1, 3, 6, 6)
    gt = rng.uniform(0, 1, (1, 3, 6, 6))
    checks.append(("tone_map + loss", lambda t, w=w, gt=gt: ops.add(
        _weighted(tone_map(t["x"]), w), loss_tonemapped_l1(t["x"], gt.astype(t["x"].dtype))),
        {"x": rng.uniform(0.05, 1, (1, 3, 6, 6))}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_channel_attention(init, "ca", 8)
    perturb_for_check(init.params, rng)
    w = u(1, 8, 4, 4)
    checks.append(("channel_attention", lambda t, w=w: _weighted(channel_attention(t["x"], t, "ca"), w),
                   {"x": u(1, 8, 4, 4), **_params(init.params)}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_fusion(init, "iam", 2)
    perturb_for_check(init.params, rng)
    w = u(1, 2, 5, 5)
    checks.append(("iam fusion", lambda t, w=w: _weighted(fuse_scales(t["a"], t["b"], t, "iam"), w),
                   {"a": _spread((1, 2, 5, 5), rng), "b": _spread((1, 2, 5, 5), rng), **_params(init.params)}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_encoder(init, 4)
    perturb_for_check(init.params, rng)
    w = [u(1, 4, 8 >> s, 8 >> s) for s in range(3)]
    checks.append(("encoder", lambda t, w=w: ops.sum(ops.concat_channels(
        [ops.global_avg_pool(ops.mul(f, Tensor(ws.astype(f.dtype)))) for f, ws in zip(encode(t["x"], t), w)])),
        {"x": u(1, 6, 8, 8), **_params(init.params)}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_generator(init, "sam", 3, 2)
    perturb_for_check(init.params, rng)
    w = u(1, 3, 6, 6)
    checks.append(("sam end-to-end", lambda t, w=w: _weighted(align_scale(t["a"], t["b"], None, t, "sam")[0], w),
                   {"a": u(1, 3, 6, 6), "b": u(1, 3, 6, 6), **_params(init.params)}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_d_wavenet(init, "dw", 4)
    perturb_for_check(init.params, rng)
    w = u(1, 4, 6, 6)
    checks.append(("d_wavenet end-to-end", lambda t, w=w: _weighted(d_wavenet(t["x"], t, "dw"), w),
                   {"x": u(1, 4, 6, 6), **_params(init.params)}))

    init = ParamInit(int(rng.integers(1 << 30)))
    init_group_wavenet(init, "gw", 4)
    perturb_for_check(init.params, rng)
    w = u(1, 4, 4, 4)
    checks.append(("group_wavenet", lambda t, w=w: _weighted(group_wavenet(t["x"], t, "gw"), w),
                   {"x": u(1, 4, 4, 4), **_params(init.params)}))
    return checks


def full_model_check(seed: int = 0) -> GradCheckReport:
    """Every parameter of a C=4, N=2, G=1 model on 8x8 input."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(channels=4, num_samples=2, num_groups=1)
    weights = init_weights(cfg, seed=seed)
    perturb_for_check(weights, rng)
    xs = [rng.uniform(0, 1, (1, 6, 8, 8)) for _ in range(3)]
    gt = rng.uniform(0, 1, (1, 3, 8, 8))

    def fn(t):
        pred = forward([Tensor(x.astype(t["merge.weight"].dtype)) for x in xs], t, cfg)
        diff = ops.sub(pred, Tensor(gt.astype(pred.dtype)))
        return ops.mean(ops.mul(diff, diff))

    return check_gradients(fn, _params(weights), max_elements=3, directions=1, seed=seed)


def run_suite(seed: int = 0, tol: float = OP_TOL, model_tol: float = MODEL_TOL,
              include_model: bool = True, progress: Callable[[CheckResult], None] = None) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in _op_checks(rng) + _composite_checks(rng):
        report = check_gradients(fn, inputs, max_elements=24, directions=2, seed=seed)
        results.append(CheckResult(name, tol, report))
        if progress:
            progress(results[-1])
    if include_model:
        results.append(CheckResult("full model C=4 N=2 G=1", model_tol, full_model_check(seed)))
        if progress:
            progress(results[-1])
    return results
