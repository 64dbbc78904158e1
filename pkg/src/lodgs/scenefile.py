"""Binary scene files.

Little-endian layout::

    b"LODGS" | version u32 | K u32 | l u32
    K records of (14 + 7 l) float32:
        position(3) quaternion(4) log_scales(3) opacity_logit(1) color(3)
        centers(l) log_widths(l) weights_scale(l) weights_opacity(l) weights_color(3 l)
    nu_ref f32 | CRC-32 of every preceding byte (u32)
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError
from .scene import PARAM_NAMES, Scene, param_shapes

MAGIC = b"LODGS"
VERSION = 1
_HEADER = struct.Struct("<5sIII")
_FOOTER = struct.Struct("<fI")


def record_floats(l: int) -> int:
    return 14 + 7 * l


def encode_scene(scene: Scene) -> bytes:
    k, l = len(scene), scene.l
    if k:
        cols = [getattr(scene, n).reshape(k, -1) for n in PARAM_NAMES]
        records = np.concatenate(cols, axis=1).astype("<f4")
    else:
        records = np.zeros((0, record_floats(l)), "<f4")
    payload = _HEADER.pack(MAGIC, VERSION, k, l) + records.tobytes() + struct.pack("<f", scene.nu_ref)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_scene(data: bytes) -> Scene:
    if len(data) < _HEADER.size + _FOOTER.size:
        raise FormatError("file too short for a scene header")
    magic, version, k, l = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported scene format version {version}")
    expected = _HEADER.size + 4 * k * record_floats(l) + _FOOTER.size
    if len(data) != expected:
        raise FormatError(f"size {len(data)} does not match header (expected {expected})")
    nu_ref, crc = _FOOTER.unpack_from(data, len(data) - _FOOTER.size)
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumError("scene checksum mismatch")
    records = np.frombuffer(data, "<f4", count=k * record_floats(l), offset=_HEADER.size)
    records = records.reshape(k, record_floats(l)).astype(np.float64)
    shapes = param_shapes(l)
    fields, col = {}, 0
    for name in PARAM_NAMES:
        width = int(np.prod(shapes[name], dtype=int))
        fields[name] = records[:, col:col + width].reshape((k,) + shapes[name])
        col += width
    return Scene(**fields, nu_ref=float(nu_ref))


def save_scene(path, scene: Scene) -> None:
    Path(path).write_bytes(encode_scene(scene))


def load_scene(path) -> Scene:
    return decode_scene(Path(path).read_bytes())
