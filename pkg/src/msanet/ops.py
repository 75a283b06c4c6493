"""Differentiable operations on rank-4 tensors.

Each op computes its forward result with numpy and registers a closure that
maps the upstream gradient to one gradient per input (``None`` for inputs
that need none). Reductions accumulate in float64.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError, UsageError
from .tensor import Tensor, as_tensor, record

LEAKY_SLOPE = 0.1

# When a list, piecewise ops append the branch each element took (sign,
# argmax, sampling cell). Two evaluations with equal traces lie on the same
# smooth piece, which is what the finite-difference oracle needs to know.
_branch_trace: Optional[list] = None


def _note_branch(arr) -> None:
    if _branch_trace is not None:
        _branch_trace.append(np.ascontiguousarray(arr).tobytes())


class branch_trace:
    """Context manager collecting the branch pattern of every piecewise op."""

    def __enter__(self) -> list:
        global _branch_trace
        self._saved = _branch_trace
        _branch_trace = []
        return _branch_trace

    def __exit__(self, *exc) -> None:
        global _branch_trace
        _branch_trace = self._saved


def _check_finite(*arrays, what="input"):
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values in {what}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(g.dtype)


def _pair(a: Tensor, b) -> tuple:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b, shape


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), a.data * b.data, back)


def scale(x: Tensor, c: float) -> Tensor:
    return record("scale", (x,), x.data * x.dtype.type(c), lambda g: (g * g.dtype.type(c),))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return record("add_scalar", (x,), x.data + x.dtype.type(c), lambda g: (g,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    return record("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def absolute(x: Tensor) -> Tensor:
    _note_branch(x.data > 0)
    return record("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


# -- reductions --------------------------------------------------------------

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    total = np.sum(x.data, dtype=np.float64).astype(x.dtype).reshape(1, 1, 1, 1)
    return record("sum", (x,), total, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    avg = (np.sum(x.data, dtype=np.float64) / n).astype(x.dtype).reshape(1, 1, 1, 1)
    return record(
        "mean", (x,), avg, lambda g: (np.broadcast_to(g / g.dtype.type(n), x.shape).copy(),)
    )


def sum_channels(x: Tensor) -> Tensor:
    """Sum over the channel axis, keeping it as a singleton."""
    out = np.sum(x.data, axis=1, keepdims=True, dtype=np.float64).astype(x.dtype)
    return record("sum_channels", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def global_avg_pool(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = np.mean(x.data, axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)

    def back(g):
        return (np.broadcast_to(g / g.dtype.type(h * w), x.shape).copy(),)

    return record("global_avg_pool", (x,), out, back)


# -- activations -------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    s = x.dtype.type(slope)
    pos = x.data > 0
    _note_branch(pos)
    out = np.where(pos, x.data, x.data * s)
    return record("leaky_relu", (x,), out, lambda g: (np.where(pos, g, g * s),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    _note_branch(pos)
    out = np.where(pos, x.data, 0).astype(x.dtype)
    return record("relu", (x,), out, lambda g: (np.where(pos, g, 0).astype(g.dtype),))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    y = np.where(a >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    # rounding would otherwise hit 0 or 1 exactly for |a| beyond ~17 (float32)
    info = np.finfo(a.dtype)
    return np.clip(y, info.tiny, 1 - info.epsneg)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return record("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise UsageError(f"unknown activation {kind!r}")


# -- channel plumbing --------------------------------------------------------

def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat_channels needs at least one tensor")
    if len(inputs) == 1:
        return inputs[0]
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {t.shape} does not match {ref}")
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])
    out = np.concatenate([t.data for t in inputs], axis=1)

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return record("concat_channels", inputs, out, back)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {c} channels")

    def back(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return record("slice_channels", (x,), x.data[:, start:stop], back)


def split_channels(x: Tensor, parts: int) -> list:
    c = x.shape[1]
    if c % parts:
        raise ShapeError(f"cannot split {c} channels into {parts} parts")
    k = c // parts
    return [slice_channels(x, i * k, (i + 1) * k) for i in range(parts)]


def pad_reflect(x: Tensor, bottom: int, right: int) -> Tensor:
    """Reflect-pad the bottom and right edges (used to make sizes even)."""
    if bottom == 0 and right == 0:
        return x
    h, w = x.shape[2:]
    rows = np.concatenate([np.arange(h), h - 2 - np.arange(bottom)])
    cols = np.concatenate([np.arange(w), w - 2 - np.arange(right)])
    if rows.min() < 0 or cols.min() < 0:
        raise ShapeError("input too small to reflect-pad")
    out = x.data[:, :, rows][:, :, :, cols]

    def back(g):
        gr = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=np.float64)
        np.add.at(gr, (slice(None), slice(None), rows), g)
        gx = np.zeros(x.shape, dtype=np.float64)
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), gr)
        return (gx.astype(g.dtype),)

    return record("pad_reflect", (x,), out, back)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window."""
    if height == x.shape[2] and width == x.shape[3]:
        return x

    def back(g):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = g
        return (full,)

    return record("crop", (x,), x.data[:, :, :height, :width], back)


# -- convolution -------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _pad_hw(a: np.ndarray, p: int, value=0.0) -> np.ndarray:
    """Constant padding of the two spatial axes (np.pad is slow for small arrays)."""
    if not p:
        return a
    b, c, h, w = a.shape
    out = np.full((b, c, h + 2 * p, w + 2 * p), value, dtype=a.dtype)
    out[:, :, p:p + h, p:p + w] = a
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    """Per-image columns ``(b, c*kh*kw, ho*wo)`` from a padded ``(b, c, h, w)`` array."""
    b, c = xp.shape[:2]
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            ys, xs = i * dilation, j * dilation
            cols[:, :, i, j] = xp[:, :, ys:ys + span_h:stride, xs:xs + span_w:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``kernel`` is ``(out_c, in_c, kh, kw)``; ``bias`` is ``(1, out_c, 1, 1)``.
    Implemented as im2col followed by one batched matrix product, which
    keeps every array in NCHW order (no layout transposes).
    """
    b, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError("conv2d: need stride >= 1, dilation >= 1, padding >= 0")
    if bias is not None and bias.data.size != o:
        raise ShapeError(f"conv2d: bias has {bias.data.size} entries for {o} output channels")
    _check_finite(x.data, kernel.data, None if bias is None else bias.data, what="conv2d")
    ho = conv_output_size(h, kh, stride, dilation, padding)
    wo = conv_output_size(w, kw, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel does not fit {h}x{w} input")

    dtype = np.result_type(x.data, kernel.data)
    xp = _pad_hw(x.data, padding)
    cols = _im2col(xp.astype(dtype, copy=False), kh, kw, ho, wo, stride, dilation)
    wmat = kernel.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(o, 1)
    out = out.reshape(b, o, ho, wo)
    same = stride == 1 and kh == kw and (kh - 1) * dilation == 2 * padding

    def back(g):
        g3 = g.reshape(b, o, ho * wo)
        gk = None
        if kernel.requires_grad:
            gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype).reshape(bias.shape)
        gx = None
        if x.requires_grad and same:
            # adjoint of a "same" stride-1 conv: correlate g with the flipped,
            # transposed kernel (cheaper than scattering columns back)
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gp = _pad_hw(g, padding)
            gx = np.matmul(flipped, _im2col(gp, kh, kw, h, w, 1, dilation)).reshape(b, c, h, w)
        elif x.requires_grad:
            dcols = np.matmul(wmat.T, g3).reshape(b, c, kh, kw, ho, wo)
            gxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    ys, xs = i * dilation, j * dilation
                    gxp[:, :, ys:ys + span_h:stride, xs:xs + span_w:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, out, back)


# -- pooling -----------------------------------------------------------------

def pool2d(x: Tensor, mode: str, window: int, stride: int, padding: int = 0) -> Tensor:
    """Average or max pooling.

    Average pooling divides by the number of in-bounds elements, so padding
    never dilutes border windows. Max pooling sends the gradient to the first
    maximal element in scan order.
    """
    if window < 1 or stride < 1 or padding < 0:
        raise ShapeError("pool2d: need window >= 1, stride >= 1, padding >= 0")
    if mode not in ("avg", "max"):
        raise UsageError(f"unknown pooling mode {mode!r}")
    b, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if window > hp or window > wp:
        raise ShapeError(f"pool window {window} larger than padded input {hp}x{wp}")
    ho = (hp - window) // stride + 1
    wo = (wp - window) // stride + 1
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    taps = [(i, j) for i in range(window) for j in range(window)]

    def tap(arr, i, j):
        return arr[:, :, i:i + span_h:stride, j:j + span_w:stride]

    if mode == "avg":
        xp = _pad_hw(x.data, padding)
        valid = _pad_hw(np.ones((1, 1, h, w)), padding)[0, 0]
        acc = np.zeros((b, c, ho, wo))
        count = np.zeros((ho, wo))
        for i, j in taps:
            acc += tap(xp, i, j)
            count += valid[i:i + span_h:stride, j:j + span_w:stride]
        out = (acc / count).astype(x.dtype)

        def back(g):
            gs = g / count.astype(g.dtype)
            gxp = np.zeros((b, c, hp, wp), dtype=g.dtype)
            for i, j in taps:
                tap(gxp, i, j)[...] += gs
            return (gxp[:, :, padding:padding + h, padding:padding + w],)

        return record("avg_pool2d", (x,), out, back)

    xp = _pad_hw(x.data, padding, -np.inf)
    # strict > keeps the first maximum in scan order
    out = tap(xp, 0, 0).copy()
    arg = np.zeros(out.shape, dtype=np.int8 if window * window < 128 else np.int64)
    for k, (i, j) in enumerate(taps[1:], start=1):
        cand = tap(xp, i, j)
        arg[cand > out] = k
        out = np.maximum(out, cand)
    _note_branch(arg)

    def back(g):
        gxp = np.zeros((b, c, hp, wp), dtype=g.dtype)
        for k, (i, j) in enumerate(taps):
            tap(gxp, i, j)[...] += np.where(arg == k, g, 0)
        return (gxp[:, :, padding:padding + h, padding:padding + w],)

    return record("max_pool2d", (x,), out, back)


# -- resampling --------------------------------------------------------------

def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) linear interpolation matrix, half-pixel centres, edge clamp."""
    src = np.clip((np.arange(2 * n) + 0.5) / 2 - 0.5, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    m = np.zeros((2 * n, n))
    m[np.arange(2 * n), i0] += 1 - frac
    m[np.arange(2 * n), i1] += frac
    return m.astype(dtype)


def upsample_bilinear_x2(x: Tensor) -> Tensor:
    h, w = x.shape[2:]
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    out = uh @ x.data @ uw.T
    return record("upsample_bilinear_x2", (x,), out, lambda g: (uh.T @ g @ uw,))


def grid_sample_bilinear(x: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear read of ``x`` at ``(row + dy, col + dx)`` for every pixel.

    ``offsets`` has shape ``(B, 2, H, W)`` with channel 0 = dy (rows) and
    channel 1 = dx (columns), in pixels. Coordinates are clamped to the
    image, so out-of-range reads return border values and carry no
    gradient with respect to the offset.
    """
    b, c, h, w = x.shape
    if offsets.shape != (b, 2, h, w):
        raise ShapeError(f"offsets must be {(b, 2, h, w)}, got {offsets.shape}")
    _check_finite(offsets.data, what="sampling offsets")
    dtype = x.dtype
    dy = offsets.data[:, 0].astype(np.float64)
    dx = offsets.data[:, 1].astype(np.float64)
    yy = np.arange(h)[None, :, None] + dy
    xx = np.arange(w)[None, None, :] + dx
    yc = np.clip(yy, 0, h - 1)
    xc = np.clip(xx, 0, w - 1)
    y0 = np.floor(yc).astype(np.int64)
    x0 = np.floor(xc).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    _note_branch(np.stack([np.floor(yy), np.floor(xx), yy >= 0, yy <= h - 1, xx >= 0, xx <= w - 1]))
    wy = (yc - y0).reshape(b, 1, h * w)
    wx = (xc - x0).reshape(b, 1, h * w)

    flat = x.data.reshape(b, c, h * w)
    idx = [(ya * w + xa).reshape(b, 1, h * w) for ya, xa in ((y0, x0), (y0, x1), (y1, x0), (y1, x1))]
    v00, v01, v10, v11 = (np.take_along_axis(flat, np.broadcast_to(i, (b, c, h * w)), axis=2) for i in idx)
    weights = [(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx]
    out = weights[0] * v00 + weights[1] * v01 + weights[2] * v10 + weights[3] * v11
    out = out.reshape(b, c, h, w).astype(dtype)

    in_y = ((yy >= 0) & (yy <= h - 1)).reshape(b, 1, h * w)
    in_x = ((xx >= 0) & (xx <= w - 1)).reshape(b, 1, h * w)

    def back(g):
        gf = g.reshape(b, c, h * w).astype(np.float64)
        gx = None
        if x.requires_grad:
            base = (np.arange(b * c).reshape(b, c, 1) * (h * w))
            all_idx = np.concatenate([(base + i).ravel() for i in idx])
            all_w = np.concatenate([(gf * wt).ravel() for wt in weights])
            gx = np.bincount(all_idx, weights=all_w, minlength=b * c * h * w)
            gx = gx.reshape(x.shape).astype(g.dtype)
        goff = None
        if offsets.requires_grad:
            d_dy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
            d_dx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
            gy = np.sum(gf * d_dy, axis=1, keepdims=True) * in_y
            gxo = np.sum(gf * d_dx, axis=1, keepdims=True) * in_x
            goff = np.concatenate([gy, gxo], axis=1).reshape(b, 2, h, w).astype(g.dtype)
        return gx, goff

    return record("grid_sample_bilinear", (x, offsets), out, back)


# -- normalisation -----------------------------------------------------------

def softmax_over_samples(scores: Tensor) -> Tensor:
    """Softmax across the channel axis; channel ``i`` holds sample ``i``'s score."""
    s = scores.data
    e = np.exp(s - s.max(axis=1, keepdims=True))
    wts = (e / e.sum(axis=1, keepdims=True, dtype=np.float64)).astype(scores.dtype)

    def back(g):
        inner = np.sum(g * wts, axis=1, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (wts * (g - inner),)

    return record("softmax_over_samples", (scores,), wts, back)

