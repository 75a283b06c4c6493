"""Loss, AdamW, cosine schedule, augmentation and the training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError, StructuralError
from .model import ModelConfig, forward, init_weights
from .nn import ModelWeights
from .preprocess import MU, ExposureStack, build_input, tone_map
from .synthetic import gen_synthetic, make_sample  # noqa: F401  (re-exported)
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 4
    patch: int = 32
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    epochs: int = 1000
    max_steps: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise ConfigError("lr_min must be below lr_max")
        if self.patch % 4:
            raise ConfigError("patch size must be divisible by 4")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def loss_tonemapped_l1(pred: Tensor, gt, mu: float = MU) -> Tensor:
    """Mean absolute difference between mu-law tone-mapped prediction and target."""
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and target {gt.shape} differ")
    return ops.mean(ops.absolute(ops.sub(tone_map(pred, mu), tone_map(gt, mu))))


# -- optimiser ---------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        self.m = {} if self.m is None else self.m
        self.v = {} if self.v is None else self.v


def adamw_step(weights: ModelWeights, grads: dict, state: AdamWState, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 1e-4) -> AdamWState:
    """One decoupled-weight-decay Adam update, applied to ``weights`` in place.

    ``grads`` maps parameter names to arrays; missing names count as zero
    gradients (their moments still decay).
    """
    state.step += 1
    t = state.step
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    for name, p in weights.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise StructuralError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data * (1 - lr * weight_decay) - lr * update).astype(p.data.dtype)
    return state


def cosine_lr(epoch: int, total: int, lr_max: float, lr_min: float) -> float:
    if not 0 <= epoch <= total:
        raise ConfigError(f"epoch {epoch} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / total))


# -- augmentation ------------------------------------------------------------

def apply_transform(image: np.ndarray, flip_h: bool, flip_v: bool, rot: int) -> np.ndarray:
    out = image
    if flip_h:
        out = out[..., ::-1]
    if flip_v:
        out = out[..., ::-1, :]
    if rot % 4:
        out = np.rot90(out, k=rot, axes=(-2, -1))
    return np.ascontiguousarray(out)


def draw_transform(rng: np.random.Generator) -> tuple:
    return bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4))


def augment(images: Sequence[np.ndarray], gt: np.ndarray, seed, transform=None):
    """Apply one random flip/rotation draw to every LDR and the ground truth."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flip_h, flip_v, rot = transform if transform is not None else draw_transform(rng)
    h, w = gt.shape[-2:]
    if rot % 2 and h != w:
        raise ShapeError("90/270 degree rotation needs square patches")
    return ([apply_transform(im, flip_h, flip_v, rot) for im in images],
            apply_transform(gt, flip_h, flip_v, rot))


# -- data --------------------------------------------------------------------

@dataclass
class Sample:
    ldr: list            # three (3, H, W) arrays
    exposure_times: list
    gt: np.ndarray       # (3, H, W)
    name: str = ""

    @classmethod
    def from_stack(cls, stack: ExposureStack, gt: np.ndarray, name: str = "") -> "Sample":
        return cls([im[0] for im in stack.images], list(stack.exposure_times), np.asarray(gt)[0], name)

    @classmethod
    def from_synthetic(cls, sample: dict, name: str = "") -> "Sample":
        return cls(list(sample["ldr"]), [2.0 ** ev for ev in sample["evs"]], sample["gt"], name)


def make_batch(samples: Sequence[Sample], gamma: float):
    """Stack samples into the three model inputs and the target."""
    stack = ExposureStack([np.stack([s.ldr[i] for s in samples]) for i in range(3)],
                          samples[0].exposure_times)
    return build_input(stack, gamma), np.stack([s.gt for s in samples]).astype(np.float32)


def _crop(sample: Sample, rng, patch: int) -> Sample:
    h, w = sample.gt.shape[-2:]
    if h == patch and w == patch:
        return sample
    if h < patch or w < patch:
        raise ShapeError(f"sample {h}x{w} smaller than the {patch} patch")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    cut = lambda a: a[..., y:y + patch, x:x + patch]  # noqa: E731
    return Sample([cut(im) for im in sample.ldr], sample.exposure_times, cut(sample.gt), sample.name)


# -- loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    weights: ModelWeights
    losses: list
    steps: int
    epochs: int
    optimizer: AdamWState
    seconds: float


def train(samples: Sequence[Sample], model_config: ModelConfig, train_config: TrainConfig,
          weights: Optional[ModelWeights] = None,
          callback: Optional[Callable[[int, int, float, float], None]] = None) -> TrainResult:
    """Run the training loop; deterministic for a fixed ``train_config.seed``."""
    if not samples:
        raise ConfigError("no training samples")
    rng = np.random.default_rng(train_config.seed)
    if weights is None:
        weights = init_weights(model_config, seed=train_config.seed)
    state = AdamWState()
    losses = []
    step = 0
    start = time.perf_counter()
    tc = train_config
    epoch = 0
    for epoch in range(tc.epochs):
        lr = cosine_lr(epoch, tc.epochs, tc.lr_max, tc.lr_min)
        order = rng.permutation(len(samples))
        for first in range(0, len(order), tc.batch_size):
            picked = []
            for idx in order[first:first + tc.batch_size]:
                s = _crop(samples[idx], rng, tc.patch)
                if tc.augment:
                    ldr, gt = augment(s.ldr, s.gt, rng)
                    s = Sample(ldr, s.exposure_times, gt, s.name)
                picked.append(s)
            inputs, target = make_batch(picked, model_config.gamma)
            for p in weights.values():
                p.grad = None
            with Tape() as tape:
                pred = forward(inputs, weights, model_config)
                loss = loss_tonemapped_l1(pred, target, model_config.mu)
            backward(tape, loss)
            grads = {k: p.grad for k, p in weights.items() if p.grad is not None}
            adamw_step(weights, grads, state, lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay)
            step += 1
            losses.append(loss.item())
            if callback is not None:
                callback(step, epoch, lr, losses[-1])
            if tc.max_steps is not None and step >= tc.max_steps:
                return TrainResult(weights, losses, step, epoch + 1, state, time.perf_counter() - start)
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, losses[-1])
    return TrainResult(weights, losses, step, epoch + 1, state, time.perf_counter() - start)


def predict(weights: ModelWeights, config: ModelConfig, ldr: Sequence[np.ndarray],
            exposure_times: Sequence[float]) -> np.ndarray:
    """Run inference on one stack of (3, H, W) frames; pads to a multiple of 4 and crops back."""
    h, w = ldr[0].shape[-2:]
    ph, pw = (-h) % 4, (-w) % 4
    frames = [np.pad(np.asarray(im, dtype=np.float32)[None], ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
              for im in ldr]
    inputs = build_input(ExposureStack(frames, exposure_times), config.gamma)
    out = forward(inputs, weights, config)
    return out.data[0, :, :h, :w]
