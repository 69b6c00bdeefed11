"""Bit-exact file formats: binary PGM images, the checkpoint container, and
feature-map exports. All multi-byte integers are little-endian."""

from __future__ import annotations

import math
import struct

import numpy as np

from .params import ParamSet
from .tensor import Tensor

CHECKPOINT_MAGIC = b"CENT"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_pgm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines, then take one token
    n = len(data)
    while pos < n:
        ch = data[pos: pos + 1]
        if ch == b"#":
            while pos < n and data[pos: pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"PGM header truncated at byte {pos}")
    start = pos
    while pos < n and not data[pos: pos + 1].isspace():
        pos += 1
    return data[start: pos], pos


def read_pgm(path: str) -> Tensor:
    """Binary PGM (P5, maxval 255) -> Tensor[1,1,H,W] with values p/255."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"not a binary PGM: bad magic {data[:2]!r} at byte 0")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_pgm_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise FormatError(f"PGM header field {token!r} not an integer at byte {pos}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} (need 255) at byte {pos}")
    if width < 1 or height < 1:
        raise FormatError(f"bad PGM extents {width}x{height}")
    pos += 1  # the single whitespace byte after maxval
    need = width * height
    body = data[pos: pos + need]
    if len(body) != need:
        raise FormatError(
            f"PGM body truncated: need {need} bytes from byte {pos}, have {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
    return Tensor(pixels.reshape(1, 1, height, width))


def write_pgm(path: str, image) -> None:
    """Tensor[1,1,H,W] (or 2-d array) in [0,1] -> binary PGM, round-half-up."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1 or arr.shape[1] != 1:
            raise ValueError(f"write_pgm needs a single-channel image, got {arr.shape}")
        arr = arr[0, 0]
    if arr.ndim != 2:
        raise ValueError(f"write_pgm needs a 2-d image or [1,1,H,W] tensor, got {arr.shape}")
    h, w = arr.shape
    quant = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(quant.tobytes())


def save_checkpoint(path: str, params: ParamSet) -> None:
    """Format: "CENT", u32 version, u32 tensor count, then per tensor
    u16 name length + UTF-8 name, u8 ndim, ndim*u32 dims, raw f64 LE values."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, t in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", t.data.ndim))
            for dim in t.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; expected {CHECKPOINT_MAGIC!r}")
    if len(data) < 12:
        raise FormatError(f"truncated header: {len(data)} bytes, need 12")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}; expected {CHECKPOINT_VERSION}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for index in range(count):
        if pos + 2 > len(data):
            raise FormatError(f"truncated name length for tensor {index} at byte {pos}")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + name_len > len(data):
            raise FormatError(f"truncated name for tensor {index} at byte {pos}")
        name = data[pos: pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 1 > len(data):
            raise FormatError(f"truncated ndim for tensor {name!r} at byte {pos}")
        ndim = data[pos]
        pos += 1
        if pos + 4 * ndim > len(data):
            raise FormatError(f"truncated dims for tensor {name!r} at byte {pos}")
        dims = struct.unpack_from(f"<{ndim}I" if ndim else "<0I", data, pos)
        pos += 4 * ndim
        n_values = int(np.prod(dims)) if ndim else 1
        if pos + 8 * n_values > len(data):
            raise FormatError(f"truncated values for tensor {name!r} at byte {pos}")
        values = np.frombuffer(data, dtype="<f8", count=n_values, offset=pos)
        pos += 8 * n_values
        out[name] = values.reshape(dims).copy()
    return out


def dump_features(path: str, tensor, mode: str = "csv") -> None:
    """Export an N,C,H,W map either as CSV rows (n,c,y,x,value) or as a tiled
    PGM grid with each channel min-max normalized (constant channels map to 0)."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"dump_features needs an N,C,H,W tensor, got shape {arr.shape}")
    if mode == "csv":
        n, c, h, w = arr.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,c,y,x,value\n")
            for ni in range(n):
                for ci in range(c):
                    for y in range(h):
                        for x in range(w):
                            fh.write(f"{ni},{ci},{y},{x},{float(arr[ni, ci, y, x])!r}\n")
    elif mode == "pgm-grid":
        n, c, h, w = arr.shape
        tiles = arr.reshape(n * c, h, w)
        cols = int(math.ceil(math.sqrt(len(tiles))))
        rows = int(math.ceil(len(tiles) / cols))
        grid = np.zeros((rows * h, cols * w), dtype=np.float64)
        for i, tile in enumerate(tiles):
            lo, hi = tile.min(), tile.max()
            norm = np.zeros_like(tile) if hi == lo else (tile - lo) / (hi - lo)
            r, col = divmod(i, cols)
            grid[r * h: (r + 1) * h, col * w: (col + 1) * w] = norm
        write_pgm(path, grid)
    else:
        raise ValueError(f"unknown dump mode {mode!r}; expected 'csv' or 'pgm-grid'")


def save_loss_trace(path: str, losses: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, value in enumerate(losses):
            fh.write(f"{step},{value!r}\n")
