"""Binary PPM / PFM images, the sample-directory layout and the weight file.

Weight file layout (all integers little-endian u32)::

    b"MSAW" | version | entry count |
    per entry: name length | UTF-8 name | rank | dims... | float32 LE payload

Loading rejects bad magic, unknown versions, truncated payloads, duplicate
names and trailing bytes.
"""
from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, FormatError, MissingFileError
from .nn import ModelWeights
from .preprocess import ExposureStack
from .tensor import Tensor

MAGIC = b"MSAW"
VERSION = 1
LDR_NAMES = ("ldr_0.ppm", "ldr_1.ppm", "ldr_2.ppm")
EXPOSURE_NAME = "exposures.txt"
GT_NAME = "gt.pfm"

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(raw: bytes, count: int, path) -> tuple:
    tokens, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(raw) or raw[pos:pos + 1] not in b" \t\r\n":
        raise FormatError(f"{path}: header must end with one whitespace byte")
    return tokens, pos + 1


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFileError(f"missing file: {path}") from None


# -- PPM ---------------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) image in [0, 1] as 8-bit binary PPM (rounded)."""
    img = np.asarray(image)
    if img.ndim == 4:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"PPM images are (3, H, W), got {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = q.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary PPM to a float32 (3, H, W) array scaled to [0, 1]."""
    raw = _read_bytes(path)
    tokens, start = _header_tokens(raw, 4, path)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise FormatError(f"{path}: unsupported PPM geometry {w}x{h} max {maxval}")
    payload = raw[start:]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return (arr.astype(np.float32) / np.float32(maxval))


# -- PFM ---------------------------------------------------------------------

def write_pfm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image as little-endian colour PFM."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 4:
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"PFM images are (3, H, W), got {img.shape}")
    h, w = img.shape[1:]
    rows = img.transpose(1, 2, 0)[::-1]  # PFM stores the bottom row first
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = _read_bytes(path)
    tokens, start = _header_tokens(raw, 4, path)
    if tokens[0] != b"PF":
        raise FormatError(f"{path}: not a colour PFM (magic {tokens[0]!r})")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError(f"{path}: bad PFM geometry {w}x{h} scale {scale}")
    payload = raw[start:]
    if len(payload) != w * h * 12:
        raise FormatError(f"{path}: expected {w * h * 12} payload bytes, found {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, 3)[::-1]
    return arr.transpose(2, 0, 1).astype(np.float32)


# -- sample directories --------------------------------------------------------

def write_exposures(path, evs) -> None:
    Path(path).write_text("".join(f"{float(ev):g}\n" for ev in evs))


def read_exposures(path) -> list:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) != 3:
        raise FormatError(f"{path}: expected three EV lines, found {len(lines)}")
    try:
        evs = [float(ln) for ln in lines]
    except ValueError:
        raise FormatError(f"{path}: EV lines must be numbers") from None
    if not evs[0] < evs[1] < evs[2]:
        raise FormatError(f"{path}: EVs must be strictly increasing, got {evs}")
    if evs[1] != 0:
        raise FormatError(f"{path}: the reference (middle) EV must be 0, got {evs[1]}")
    return evs


def write_sample(directory, ldrs, evs, gt) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, img in zip(LDR_NAMES, ldrs):
        write_ppm(d / name, img)
    write_exposures(d / EXPOSURE_NAME, evs)
    write_pfm(d / GT_NAME, gt)


def read_sample(directory):
    """Load one sample directory; returns ``(ExposureStack, gt)`` with gt ``(1, 3, H, W)``."""
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(f"sample directory not found: {d}")
    ldrs = [read_ppm(d / name) for name in LDR_NAMES]
    evs = read_exposures(d / EXPOSURE_NAME)
    gt = read_pfm(d / GT_NAME)
    shapes = {im.shape for im in ldrs} | {gt.shape}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"{d}: image dimensions differ: {sorted(shapes)}")
    if np.any(gt < 0) or not np.all(np.isfinite(gt)):
        raise FormatError(f"{d}: ground truth must be finite and non-negative")
    return ExposureStack.from_ev([im[None] for im in ldrs], evs), gt[None]


def list_samples(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(f"dataset directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.is_dir() and (p / GT_NAME).exists())


# -- weights -----------------------------------------------------------------

def weights_to_bytes(weights) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, value in weights.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def weights_from_bytes(raw: bytes, source="<bytes>") -> ModelWeights:
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"{source}: truncated at byte {pos} (need {n} more)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{source}: bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    out: ModelWeights = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{source}: entry name is not UTF-8") from None
        if name in out:
            raise FormatError(f"{source}: duplicate entry {name!r}")
        (rank,) = struct.unpack("<I", take(4))
        if rank > 8:
            raise FormatError(f"{source}: implausible rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if n * 4 > len(view) - pos:
            raise FormatError(f"{source}: dims {dims} of {name!r} exceed the remaining payload")
        data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        # model parameters are rank 4; other ranks come back as plain arrays
        out[name] = Tensor(data, requires_grad=True, name=name) if rank == 4 else data
    if pos != len(view):
        raise FormatError(f"{source}: {len(view) - pos} trailing bytes")
    return out


def save_weights(weights, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(weights_to_bytes(weights))
    os.replace(tmp, path)


def load_weights(path) -> ModelWeights:
    return weights_from_bytes(_read_bytes(path), source=str(path))


def write_keyvalues(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def read_keyvalues(path) -> dict:
    out = {}
    for line in _read_bytes(path).decode("utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
