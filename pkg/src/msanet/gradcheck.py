"""Finite-difference verification of reverse-mode gradients.

The analytic side runs the function on float32 tensors and calls
:func:`msanet.tensor.backward`. The oracle re-evaluates the same function on
float64 copies of the inputs with central differences, so it never touches
the backward closures.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .ops import branch_trace
from .tensor import Tape, Tensor, backward

Fn = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    # probes whose step had to shrink to stay on one smooth piece
    straddled: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), atol)
    return float(np.linalg.norm(a - n) / denom)


def analytic_gradients(fn: Fn, inputs: Mapping[str, np.ndarray], wrt=None) -> dict:
    wrt = set(inputs) if wrt is None else set(wrt)
    tensors = {k: Tensor(np.asarray(v, dtype=np.float32), requires_grad=k in wrt) for k, v in inputs.items()}
    with Tape() as tape:
        loss = fn(tensors)
    backward(tape, loss)
    return {k: (tensors[k].grad if tensors[k].grad is not None else np.zeros_like(tensors[k].data))
            for k in wrt}


def _eval64(fn: Fn, arrays: Mapping[str, np.ndarray]):
    """Value of ``fn`` in float64 plus the branch pattern it went through."""
    with branch_trace() as trace:
        value = float(fn({k: Tensor(v) for k, v in arrays.items()}).data.reshape(-1)[0])
    return value, tuple(trace)


def check_gradients(fn: Fn, inputs: Mapping[str, np.ndarray], wrt=None, step: float = 1e-3,
                    max_elements: int = 64, directions: int = 2, seed: int = 0,
                    atol: float = 1e-6, min_step: float = 1e-7) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    Tensors with at most ``max_elements`` entries are probed entry by entry.
    Larger ones get ``max_elements`` randomly chosen entries plus
    ``directions`` random directional derivatives, which cover every entry
    at once. The reported error per tensor is the norm-wise relative error
    of the stacked probes.

    A probe whose two evaluations took different branches through some
    piecewise op (a ReLU sign, a max-pool winner, a bilinear cell) measures
    the kink rather than the derivative. For those probes only the step is
    shrunk by factors of 10 until both sides sit on the same piece; a probe
    that still straddles at ``min_step`` makes the tensor's error ``inf``.
    ``report.straddled`` counts the refined probes.
    """
    rng = np.random.default_rng(seed)
    inputs = {k: np.asarray(v) for k, v in inputs.items()}
    wrt = list(inputs) if wrt is None else list(wrt)
    grads = analytic_gradients(fn, inputs, wrt)
    base = {k: v.astype(np.float64) for k, v in inputs.items()}
    report = GradCheckReport()

    def central(name, direction):
        h = step
        while h >= min_step * (1 - 1e-9):
            plus = dict(base)
            minus = dict(base)
            plus[name] = base[name] + h * direction
            minus[name] = base[name] - h * direction
            (fp, tp), (fm, tm) = _eval64(fn, plus), _eval64(fn, minus)
            if tp == tm:
                return (fp - fm) / (2 * h), h != step
            h /= 10
        return None, True

    for name in wrt:
        g = grads[name].astype(np.float64)
        shape, size = base[name].shape, base[name].size
        probes = []
        if size <= max_elements:
            picks = range(size)
        else:
            picks = rng.choice(size, size=max_elements, replace=False)
        for flat in picks:
            e = np.zeros(size)
            e[flat] = 1.0
            probes.append(e.reshape(shape))
        if size > max_elements:
            for _ in range(directions):
                v = rng.standard_normal(shape)
                v /= np.linalg.norm(v)  # unit step keeps probes as local as single-entry ones
                probes.append(v)
        a_probe, n_probe, refined, ok = [], [], 0, True
        for d in probes:
            numeric, was_refined = central(name, d)
            refined += was_refined
            if numeric is None:
                ok = False
                break
            a_probe.append(float(np.sum(g * d)))
            n_probe.append(numeric)
        report.straddled[name] = refined
        report.errors[name] = relative_error(np.array(a_probe), np.array(n_probe), atol) if ok else float("inf")
    return report
