"""PNG and raw float-grid files.

Float grid layout (``*.tsf``): a 16-byte header followed by the payload.

    bytes 0-3    magic ``b"TSF1"``
    bytes 4-7    rows      (uint32, little-endian)
    bytes 8-11   cols      (uint32, little-endian)
    bytes 12-15  channels  (uint32, little-endian)
    payload      rows*cols*channels float32, little-endian, row-major
                 (channel fastest)

Several records may be concatenated in one file; ``read_float_arrays``
returns them in order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"TSF1"
_HEADER = struct.Struct("<4sIII")


def _as_3d(arr):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        return arr[None, :, None]
    if arr.ndim == 2:
        return arr[:, :, None]
    if arr.ndim == 3:
        return arr
    raise ValueError(f"float grids are at most 3-D, got shape {arr.shape}")


def encode_float_array(arr) -> bytes:
    a = _as_3d(arr)
    rows, cols, ch = a.shape
    return _HEADER.pack(MAGIC, rows, cols, ch) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_float_array(path, *arrays):
    Path(path).write_bytes(b"".join(encode_float_array(a) for a in arrays))


def read_float_arrays(path):
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ValueError(f"{path}: truncated header at byte {pos}")
        magic, rows, cols, ch = _HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic at byte {pos}")
        pos += _HEADER.size
        n = rows * cols * ch * 4
        if len(data) - pos < n:
            raise ValueError(f"{path}: truncated payload at byte {pos}")
        arr = np.frombuffer(data, dtype="<f4", count=rows * cols * ch, offset=pos)
        out.append(arr.reshape(rows, cols, ch).astype(np.float64))
        pos += n
    return out


def read_float_array(path):
    arrays = read_float_arrays(path)
    if len(arrays) != 1:
        raise ValueError(f"{path}: expected one record, found {len(arrays)}")
    a = arrays[0]
    return a[:, :, 0] if a.shape[2] == 1 else a


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def read_image(path):
    """RGB image as float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


_VIRIDIS_STOPS = np.array([
    [0.267, 0.005, 0.329], [0.283, 0.141, 0.458], [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553], [0.164, 0.471, 0.558], [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518], [0.267, 0.749, 0.441], [0.478, 0.821, 0.318],
    [0.741, 0.873, 0.150], [0.993, 0.906, 0.144],
])


def heatmap(values, vmin=None, vmax=None):
    """Map a 2-D array to RGB through a viridis-like ramp."""
    v = np.asarray(values, dtype=np.float64)
    lo = np.nanmin(v) if vmin is None else vmin
    hi = np.nanmax(v) if vmax is None else vmax
    t = np.zeros_like(v) if hi <= lo else np.clip((v - lo) / (hi - lo), 0, 1)
    t = np.nan_to_num(t)
    pos = t * (len(_VIRIDIS_STOPS) - 1)
    i0 = np.minimum(pos.astype(int), len(_VIRIDIS_STOPS) - 2)
    f = (pos - i0)[..., None]
    return _VIRIDIS_STOPS[i0] * (1 - f) + _VIRIDIS_STOPS[i0 + 1] * f
