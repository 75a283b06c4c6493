"""Full network: shared encoder, coarse-to-fine alignment, wavelet merging head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import ops
from .encoder import SCALES, encode, init_encoder
from .errors import ConfigError, ShapeError, StructuralError
from .iam import FUSION_MODES, fuse_scales, init_fusion
from .nn import ModelWeights, ParamInit, conv, count_parameters
from .preprocess import GAMMA, MU
from .sam import align_scale, init_generator
from .tensor import Tensor
from .wavelet import ATTENTION_RATIO, group_wavenet, init_group_wavenet

BRANCHES = (0, 2)  # low and high exposure; index 1 is the reference


@dataclass
class ModelConfig:
    channels: int = 16
    num_samples: int = 3
    num_groups: int = 3
    gamma: float = GAMMA
    mu: float = MU
    fusion_mode: str = "mask"
    multiscale: bool = True
    use_dwt: bool = True

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.num_groups not in (1, 2, 3):
            raise ConfigError("num_groups must be 1, 2 or 3")
        if self.channels < 1 or self.channels % ATTENTION_RATIO:
            raise ConfigError(f"channels must be a positive multiple of {ATTENTION_RATIO}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def init_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    c = config.channels
    init = ParamInit(seed)
    init_encoder(init, c)
    scales = range(SCALES) if config.multiscale else range(1)
    for b in BRANCHES:
        for s in scales:
            init_generator(init, f"sam.b{b}.s{s}", c, config.num_samples)
        if config.multiscale:
            for s in range(SCALES - 1):
                init_fusion(init, f"iam.b{b}.s{s}", c, config.fusion_mode)
    init.conv("merge", 3 * c, c)
    for g in range(config.num_groups):
        init_group_wavenet(init, f"gw{g}", c, config.use_dwt)
    init.conv("head.fuse1", config.num_groups * c, c)
    init.conv("head.fuse2", c, 3)
    init.conv("head.skip", c, 3, k=1)
    return init.params


@lru_cache(maxsize=16)
def _expected_shapes(key: tuple) -> dict:
    weights = init_weights(ModelConfig(**dict(key)))
    return {name: p.shape for name, p in weights.items()}


def check_weights(weights: ModelWeights, config: ModelConfig) -> None:
    """Raise :class:`StructuralError` unless ``weights`` has exactly the parameters ``config`` needs."""
    expected = _expected_shapes(tuple(sorted(config.to_dict().items())))
    missing = [k for k in expected if k not in weights]
    extra = [k for k in weights if k not in expected]
    if missing or extra:
        raise StructuralError(f"weights do not match the configuration: missing {missing[:3]}, "
                              f"unexpected {extra[:3]}")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise StructuralError(f"parameter {name!r} has shape {tuple(weights[name].shape)}, "
                                  f"configuration needs {shape}")


def align_branch(feats: Sequence[Tensor], ref_feats: Sequence[Tensor], weights: ModelWeights,
                 config: ModelConfig, branch: int, trace: Optional[list] = None) -> Tensor:
    """Align one non-reference pyramid to the reference, coarsest scale first."""
    if not config.multiscale:
        aligned, _ = align_scale(feats[0], ref_feats[0], None, weights, f"sam.b{branch}.s0",
                                 config.num_samples, trace)
        return aligned
    top = SCALES - 1
    out, prior = align_scale(feats[top], ref_feats[top], None, weights, f"sam.b{branch}.s{top}",
                             config.num_samples, trace)
    for s in range(top - 1, -1, -1):
        aligned, prior = align_scale(feats[s], ref_feats[s], prior, weights, f"sam.b{branch}.s{s}",
                                     config.num_samples, trace)
        out = fuse_scales(aligned, ops.upsample_bilinear_x2(out), weights, f"iam.b{branch}.s{s}",
                          config.fusion_mode)
    return out


def forward(inputs: Sequence, weights: ModelWeights, config: ModelConfig,
            trace: Optional[list] = None) -> Tensor:
    """Map three ``(B, 6, H, W)`` stacks to a ``(B, 3, H, W)`` HDR estimate in (0, 1).

    ``trace``, when given, collects the intermediate tensors of every
    alignment site (see :func:`msanet.sam.align_scale`).
    """
    if len(inputs) != 3:
        raise ShapeError("the model takes exactly three exposure stacks")
    xs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32)) for x in inputs]
    if any(x.shape != xs[0].shape for x in xs):
        raise ShapeError("all three stacks must share one shape")
    if xs[0].shape[1] != 6:
        raise ShapeError(f"stacks must have 6 channels, got {xs[0].shape[1]}")
    if xs[0].shape[2] % 4 or xs[0].shape[3] % 4:
        raise ShapeError(f"spatial dims must be divisible by 4, got {xs[0].shape[2:]}")
    check_weights(weights, config)
    try:
        pyramids = [encode(x, weights) for x in xs]
        ref = pyramids[1]
        low = align_branch(pyramids[0], ref, weights, config, 0, trace)
        high = align_branch(pyramids[2], ref, weights, config, 2, trace)

        feat = ops.leaky_relu(conv(weights, "merge", ops.concat_channels([low, ref[0], high])))
        groups = []
        for g in range(config.num_groups):
            feat = ops.leaky_relu(group_wavenet(feat, weights, f"gw{g}", config.use_dwt))
            groups.append(feat)
        fused = ops.leaky_relu(conv(weights, "head.fuse1", ops.concat_channels(groups)))
        fused = conv(weights, "head.fuse2", fused)
        return ops.sigmoid(ops.add(fused, conv(weights, "head.skip", ref[0])))
    except ShapeError as exc:
        raise StructuralError(f"weights do not match the configuration: {exc}") from exc


__all__ = ["ModelConfig", "init_weights", "forward", "count_parameters", "align_branch", "check_weights"]
