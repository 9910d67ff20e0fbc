"""On-disk formats: PFM depth maps, binary PPM images, the A2F1 parameter
container, and canonical JSON.

PFM (grayscale only)::

    b"Pf\\n" b"<width> <height>\\n" b"<scale>\\n"   scale < 0: little-endian
    width*height float32, bottom row first

Invalid pixels are written as 0.0; on read, 0.0 and non-finite values are
invalid.

A2F1 parameter container (all integers little-endian)::

    b"A2F1"
    u32  format version (1)
    u32  number of header fields N (14)
    i64 * N header, in order:
         backbone: patch, dim, heads, groups, blocks_per_group, mlp_ratio,
                   seed, height, width
         sape:     prompted_levels (-1 = default), pyramid_levels,
                   film_hidden_mult, seed, identity_fusion (0/1)
    then two sections, model tensors first, prompt-encoder tensors second:
      u32  tensor count
      per tensor: u16 name length, UTF-8 name, u8 ndim, u32 * ndim shape,
                  float64 little-endian values (C order)

Every write goes to a temporary file in the target directory first and is
renamed into place.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .errors import DataError, FormatError
from .params import ParamSet
from .sape import SapeConfig

MAGIC = b"A2F1"
CONTAINER_VERSION = 1


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PFM


@dataclass(frozen=True, eq=False)
class Pfm:
    values: np.ndarray   # float64, invalid pixels 0.0
    valid: np.ndarray
    big_endian: bool


def pfm_bytes(values, valid=None, big_endian: bool = False) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"PFM holds a 2-D map, got shape {values.shape}")
    valid = np.isfinite(values) if valid is None else np.asarray(valid, dtype=bool)
    if (valid & ~np.isfinite(values)).any():
        raise DataError("non-finite value at a valid pixel")
    data = np.where(valid, values, 0.0).astype(">f4" if big_endian else "<f4")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n{'1.0' if big_endian else '-1.0'}\n".encode("ascii")
    return header + np.ascontiguousarray(data[::-1]).tobytes()


def write_pfm(path, values, valid=None, big_endian: bool = False):
    """Write a map (array, or any object with ``values`` / ``valid``)."""
    if hasattr(values, "values") and hasattr(values, "valid"):
        values, valid = values.values, values.valid
    atomic_write(path, pfm_bytes(values, valid, big_endian))


def _read_token(buf: bytes, pos: int):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError("truncated PFM header")
    return buf[pos:end].decode("ascii", errors="replace").strip(), end + 1


def parse_pfm(buf: bytes) -> Pfm:
    kind, pos = _read_token(buf, 0)
    if kind != "Pf":
        raise FormatError(f"not a grayscale PFM (magic {kind!r})")
    dims, pos = _read_token(buf, pos)
    scale_txt, pos = _read_token(buf, pos)
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_txt)
    except ValueError as exc:
        raise FormatError(f"bad PFM header: {dims!r} / {scale_txt!r}") from exc
    if w < 1 or h < 1 or scale == 0 or not math.isfinite(scale):
        raise FormatError("bad PFM dimensions or scale")
    big = scale > 0
    need = 4 * w * h
    if len(buf) - pos != need:
        raise FormatError(f"expected {need} data bytes, found {len(buf) - pos}")
    data = np.frombuffer(buf, dtype=">f4" if big else "<f4", count=w * h, offset=pos)
    vals = data.reshape(h, w)[::-1].astype(np.float64)
    valid = np.isfinite(vals) & (vals != 0.0)
    return Pfm(np.where(valid, vals, 0.0), valid, big)


def read_pfm(path) -> Pfm:
    return parse_pfm(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PPM (P6)


def to_uint8(rgb) -> np.ndarray:
    a = np.asarray(rgb)
    if a.dtype == np.uint8:
        return a
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def ppm_bytes(rgb) -> bytes:
    a = to_uint8(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DataError(f"PPM needs H x W x 3, got {a.shape}")
    h, w = a.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(a).tobytes()


def write_ppm(path, rgb):
    atomic_write(path, ppm_bytes(rgb))


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an H x W x 3 uint8 array."""
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        fields.append(buf[start:pos].decode("ascii"))
    pos += 1
    if fields[0] != "P6":
        raise FormatError(f"not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    if len(buf) - pos != w * h * 3:
        raise FormatError("PPM payload size mismatch")
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w, 3).copy()


_PALETTE = np.array([
    [0.19, 0.07, 0.23], [0.16, 0.47, 0.93], [0.10, 0.83, 0.61],
    [0.66, 0.97, 0.22], [0.98, 0.73, 0.20], [0.85, 0.25, 0.05], [0.48, 0.02, 0.01],
])


def false_color(values, valid=None, lo=None, hi=None) -> np.ndarray:
    """Map a scalar field to RGB uint8; invalid pixels are black."""
    values = np.asarray(values, dtype=np.float64)
    valid = np.isfinite(values) if valid is None else np.asarray(valid, dtype=bool) & np.isfinite(values)
    if valid.any():
        lo = float(values[valid].min()) if lo is None else lo
        hi = float(values[valid].max()) if hi is None else hi
    else:
        lo, hi = 0.0, 1.0
    span = hi - lo if hi > lo else 1.0
    t = np.clip((np.where(valid, values, lo) - lo) / span, 0.0, 1.0) * (len(_PALETTE) - 1)
    i0 = np.minimum(np.floor(t).astype(int), len(_PALETTE) - 2)
    w = (t - i0)[..., None]
    rgb = _PALETTE[i0] + w * (_PALETTE[i0 + 1] - _PALETTE[i0])
    rgb[~valid] = 0.0
    return to_uint8(rgb)


# ---------------------------------------------------------------------------
# A2F1 parameter container

_BACKBONE_FIELDS = ("patch", "dim", "heads", "groups", "blocks_per_group", "mlp_ratio", "seed",
                    "height", "width")
_SAPE_FIELDS = ("prompted_levels", "pyramid_levels", "film_hidden_mult", "seed", "identity_fusion")


def _pack_section(ps: ParamSet) -> bytes:
    out = [struct.pack("<I", len(ps))]
    for name, arr in ps.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def container_bytes(bcfg: BackboneConfig, model: ParamSet, scfg: SapeConfig, sape: ParamSet) -> bytes:
    header = [getattr(bcfg, f) for f in _BACKBONE_FIELDS]
    s = scfg.to_dict()
    s["prompted_levels"] = -1 if s["prompted_levels"] is None else s["prompted_levels"]
    s["identity_fusion"] = int(s["identity_fusion"])
    header += [s[f] for f in _SAPE_FIELDS]
    head = MAGIC + struct.pack("<II", CONTAINER_VERSION, len(header)) + struct.pack(f"<{len(header)}q", *header)
    return head + _pack_section(model) + _pack_section(sape)


def save_params(path, bcfg, model, scfg, sape):
    atomic_write(path, container_bytes(bcfg, model, scfg, sape))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("truncated A2F1 container")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated A2F1 container")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b


def _unpack_section(r: _Reader) -> ParamSet:
    (count,) = r.take("<I")
    ps = ParamSet()
    for _ in range(count):
        (nlen,) = r.take("<H")
        name = r.raw(nlen).decode("utf-8")
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        ps[name] = np.frombuffer(r.raw(8 * n), dtype="<f8").reshape(shape)
    return ps


def parse_container(buf: bytes):
    """Returns ``(BackboneConfig, model ParamSet, SapeConfig, sape ParamSet)``."""
    if buf[:4] != MAGIC:
        raise FormatError("missing A2F1 magic")
    r = _Reader(buf)
    r.pos = 4
    version, n = r.take("<II")
    if version != CONTAINER_VERSION:
        raise FormatError(f"unsupported container version {version}")
    if n != len(_BACKBONE_FIELDS) + len(_SAPE_FIELDS):
        raise FormatError(f"unexpected header length {n}")
    header = r.take(f"<{n}q")
    nb = len(_BACKBONE_FIELDS)
    bcfg = BackboneConfig(**dict(zip(_BACKBONE_FIELDS, header[:nb])))
    s = dict(zip(_SAPE_FIELDS, header[nb:]))
    s["prompted_levels"] = None if s["prompted_levels"] < 0 else s["prompted_levels"]
    s["identity_fusion"] = bool(s["identity_fusion"])
    scfg = SapeConfig(**s)
    model = _unpack_section(r)
    sape = _unpack_section(r)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after A2F1 payload")
    return bcfg, model, scfg, sape


def load_params(path):
    return parse_container(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# JSON


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats, NaN/inf as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, canonical_json(obj).encode("utf-8"))
