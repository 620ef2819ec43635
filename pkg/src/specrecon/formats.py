"""Binary containers for cubes (HSCB) and model checkpoints (SRCK), plus 8-bit export.

HSCB layout, all little-endian::

    0   4s   magic b"HSCB"
    4   u16  version (1)
    6   u32  h
    10  u32  w
    14  u32  c
    18  f32  wavelengths[c]
    ..  f32  c planes of h*w values, row-major

SRCK layout, all little-endian::

    0   4s   magic b"SRCK"
    4   u32  version (1)
    8   u32  n_res_blocks, n_features, n_bottleneck, out_channels, long_skip
    28  u32  tensor count
    then per tensor, in ``model.param_shapes`` order:
        u16 name length, utf-8 name, u8 ndim, u32 dims[ndim], f32 data
"""
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .data import HyperCube
from .errors import FormatError
from .metrics import quantize_255
from .model import ModelConfig, ModelParams, param_shapes

CUBE_MAGIC = b"HSCB"
CUBE_VERSION = 1
CKPT_MAGIC = b"SRCK"
CKPT_VERSION = 1

_F32 = np.dtype("<f4")
# Refuse headers describing more than this many floats (4 GiB of payload).
MAX_ELEMENTS = 1 << 30


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.pos} left", offset=self.pos, path=self.path)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count, what):
        return np.frombuffer(self.take(4 * count, what), dtype=_F32).astype(np.float32)

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes", offset=self.pos, path=self.path)


# ---------------------------------------------------------------- cubes

def cube_to_bytes(cube):
    c, h, w = cube.data.shape
    head = CUBE_MAGIC + struct.pack("<HIII", CUBE_VERSION, h, w, c)
    return (head + np.asarray(cube.wavelengths, dtype=_F32).tobytes()
            + np.ascontiguousarray(cube.data, dtype=_F32).tobytes())


def cube_from_bytes(buf, path=None):
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}", offset=0, path=path)
    (version,) = r.unpack("<H", "version")
    if version != CUBE_VERSION:
        raise FormatError(f"unsupported cube version {version}", offset=4, path=path)
    h, w, c = r.unpack("<III", "dimensions")
    if c == 0 or h * w * c > MAX_ELEMENTS:
        raise FormatError(f"implausible dimensions h={h} w={w} c={c}", offset=6, path=path)
    wavelengths = r.floats(c, "wavelengths")
    data = r.floats(c * h * w, "band data").reshape(c, h, w)
    r.finish()
    try:
        return HyperCube(data, wavelengths)
    except ValueError as exc:
        raise FormatError(str(exc), offset=18, path=path) from None


def save_cube(cube, path):
    Path(path).write_bytes(cube_to_bytes(cube))


def load_cube(path):
    return cube_from_bytes(Path(path).read_bytes(), path=path)


# ---------------------------------------------------------------- checkpoints

def params_to_bytes(params):
    cfg = params.config
    out = [CKPT_MAGIC, struct.pack("<IIIIII", CKPT_VERSION, cfg.n_res_blocks, cfg.n_features,
                                   cfg.n_bottleneck, cfg.out_channels, int(cfg.long_skip))]
    shapes = param_shapes(cfg)
    out.append(struct.pack("<I", len(shapes)))
    for name, shape in shapes.items():
        arr = params[name]
        if arr.shape != shape:
            raise FormatError(f"{name} has shape {arr.shape}, expected {shape}")
        enc = name.encode()
        out.append(struct.pack("<H", len(enc)) + enc + struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        out.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    return b"".join(out)


def params_from_bytes(buf, path=None):
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0, path=path)
    (version,) = r.unpack("<I", "version")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    at = r.pos
    blocks, feats, bottleneck, out_ch, long_skip = r.unpack("<5I", "model config")
    try:
        cfg = ModelConfig(blocks, feats, bottleneck, out_ch, bool(long_skip))
    except ValueError as exc:
        raise FormatError(f"invalid model config: {exc}", offset=at, path=path) from None
    shapes = param_shapes(cfg)
    at = r.pos
    (count,) = r.unpack("<I", "tensor count")
    if count != len(shapes):
        raise FormatError(f"{count} tensors, config needs {len(shapes)}", offset=at, path=path)
    tensors = {}
    for name, shape in shapes.items():
        at = r.pos
        (nlen,) = r.unpack("<H", "name length")
        got = r.take(nlen, "tensor name").decode("utf-8", errors="replace")
        if got != name:
            raise FormatError(f"expected tensor {name!r}, found {got!r}", offset=at, path=path)
        (ndim,) = r.unpack("<B", "ndim")
        dims = r.unpack(f"<{ndim}I", "dims")
        if dims != shape:
            raise FormatError(f"{name} dims {dims} != {shape}", offset=at, path=path)
        tensors[name] = r.floats(int(np.prod(shape)), name).reshape(shape)
    r.finish()
    return ModelParams(cfg, tensors)


def save_params(params, path):
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path):
    return params_from_bytes(Path(path).read_bytes(), path=path)


# ---------------------------------------------------------------- 8-bit export

def to_uint8(x):
    """[0, 1] floats to 0..255 with round-half-away-from-zero and clamping."""
    return quantize_255(np.asarray(x, dtype=np.float64) * 255.0).astype(np.uint8)


def save_rgb_png(rgb, path):
    """Write a ``(3, h, w)`` float image in [0, 1] as an 8-bit PNG."""
    Image.fromarray(np.ascontiguousarray(to_uint8(rgb).transpose(1, 2, 0))).save(path, format="PNG")


def load_rgb_png(path):
    """Read an 8-bit PNG back as ``(3, h, w)`` uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).transpose(2, 0, 1).copy()
