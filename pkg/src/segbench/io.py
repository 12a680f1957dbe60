"""NIfTI-1 and raw+JSON sidecar reading and writing.

Only the subset needed for spacing-based evaluation is handled: 3D volumes,
dtypes uint8/int16/float32, either byte order, optional gzip. qform/sform
and header extensions are ignored on read and not written.
"""
from __future__ import annotations

import gzip
import json
import os
import struct
from pathlib import Path

import numpy as np

from .volume import LabelVolume, Spacing, Volume

__all__ = [
    "NiftiError",
    "BadMagicError",
    "UnsupportedDtypeError",
    "DimensionError",
    "TruncatedPayloadError",
    "read_nifti",
    "write_nifti",
    "read_raw",
    "write_raw",
    "read_volume",
    "write_volume",
    "read_labels",
]

HEADER_SIZE = 348
# NIfTI datatype code -> numpy base dtype
_CODES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}
_DTYPE_CODES = {v: k for k, v in _CODES.items()}
_SIDECAR_DTYPES = {"u8": np.dtype("u1"), "i16": np.dtype("i2"), "f32": np.dtype("f4")}


class NiftiError(ValueError):
    pass


class BadMagicError(NiftiError):
    pass


class UnsupportedDtypeError(NiftiError):
    pass


class DimensionError(NiftiError):
    pass


class TruncatedPayloadError(NiftiError):
    pass


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def _parse_header(hdr: bytes):
    if len(hdr) < HEADER_SIZE:
        raise TruncatedPayloadError(f"header is {len(hdr)} bytes, need {HEADER_SIZE}")
    for endian in "<>":
        if struct.unpack(endian + "i", hdr[:4])[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError("sizeof_hdr is not 348 in either byte order")
    magic = hdr[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise BadMagicError(f"bad magic {magic!r}")
    dim = struct.unpack(endian + "8h", hdr[40:56])
    datatype, _bitpix = struct.unpack(endian + "2h", hdr[70:74])
    pixdim = struct.unpack(endian + "8f", hdr[76:108])
    vox_offset, scl_slope, scl_inter = struct.unpack(endian + "3f", hdr[108:120])
    if dim[0] != 3:
        raise DimensionError(f"dim[0] must be 3, got {dim[0]}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise DimensionError(f"non-positive dims {dims}")
    if datatype not in _CODES:
        raise UnsupportedDtypeError(f"unsupported NIfTI datatype code {datatype}")
    return {
        "endian": endian,
        "single_file": magic == b"n+1\x00",
        "dims": dims,
        "dtype": _CODES[datatype].newbyteorder(endian),
        "spacing": tuple(abs(float(p)) for p in pixdim[1:4]),
        "vox_offset": int(vox_offset),
        "scl_slope": float(scl_slope),
        "scl_inter": float(scl_inter),
    }


def _decode(payload: bytes, h: dict, source) -> np.ndarray:
    n = h["dims"][0] * h["dims"][1] * h["dims"][2]
    need = n * h["dtype"].itemsize
    if len(payload) < need:
        raise TruncatedPayloadError(f"{source}: payload has {len(payload)} bytes, need {need}")
    data = np.frombuffer(payload, dtype=h["dtype"], count=n)
    data = data.astype(h["dtype"].newbyteorder("="))
    data = data.reshape(h["dims"], order="F")
    slope, inter = h["scl_slope"], h["scl_inter"]
    if slope != 0 and np.isfinite(slope) and (slope != 1 or inter != 0):
        data = data.astype(np.float64) * slope + inter
    return data


def read_nifti(path) -> Volume:
    """Read a 3D NIfTI-1 file (``.nii``, ``.nii.gz`` or an ``.hdr``/``.img`` pair)."""
    path = Path(path)
    with _open(path, "rb") as fh:
        blob = fh.read()
    h = _parse_header(blob[:HEADER_SIZE])
    if h["single_file"]:
        if h["vox_offset"] < HEADER_SIZE:
            raise NiftiError(f"vox_offset {h['vox_offset']} inside the header")
        payload = blob[h["vox_offset"]:]
    else:
        img = path.with_name(path.name.replace(".hdr", ".img"))
        if img == path or not img.exists():
            raise NiftiError(f"ni1 header without image file next to {path}")
        with _open(img, "rb") as fh:
            payload = fh.read()[h["vox_offset"]:]
    return Volume(_decode(payload, h, path), Spacing(*h["spacing"]))


def _storage_dtype(volume: Volume) -> np.dtype:
    dt = np.asarray(volume.data).dtype
    if dt == np.bool_:
        return np.dtype("u1")
    for candidate in (np.dtype("u1"), np.dtype("i2"), np.dtype("f4")):
        if dt == candidate:
            return candidate
    if dt.kind in "iu" and volume.data.size:
        lo, hi = int(volume.data.min()), int(volume.data.max())
        if 0 <= lo and hi <= 255:
            return np.dtype("u1")
        if -32768 <= lo and hi <= 32767:
            return np.dtype("i2")
    if dt.kind == "f":
        return np.dtype("f4")
    raise UnsupportedDtypeError(f"cannot store dtype {dt}")


def write_nifti(volume: Volume, path, dtype=None) -> None:
    """Write a single-file NIfTI-1 volume; gzip when the name ends in ``.gz``."""
    path = Path(path)
    dt = np.dtype(dtype) if dtype is not None else _storage_dtype(volume)
    if dt not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"cannot store dtype {dt}")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    nx, ny, nz = volume.dims
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _DTYPE_CODES[dt], dt.itemsize * 8)
    sx, sy, sz = volume.spacing.as_tuple()
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)
    # xyzt_units: mm
    struct.pack_into("<B", hdr, 123, 2)
    hdr[344:348] = b"n+1\x00"
    payload = np.asarray(volume.data).astype(dt.newbyteorder("<")).tobytes(order="F")
    with _open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)
        fh.write(payload)


def _sidecar(path: Path) -> tuple[Path, Path]:
    base = path.with_suffix("") if path.suffix in (".raw", ".json") else path
    return base.with_suffix(".raw"), base.with_suffix(".json")


def read_raw(path) -> Volume:
    """Read ``<name>.raw`` with its ``<name>.json`` header."""
    raw, meta_path = _sidecar(Path(path))
    meta = json.loads(meta_path.read_text())
    if meta.get("order", "x-fastest") != "x-fastest":
        raise NiftiError(f"unsupported voxel order {meta.get('order')!r}")
    if meta.get("dtype") not in _SIDECAR_DTYPES:
        raise UnsupportedDtypeError(f"unsupported sidecar dtype {meta.get('dtype')!r}")
    dims = tuple(int(d) for d in meta["dims"])
    if len(dims) != 3 or min(dims) < 1:
        raise DimensionError(f"bad dims {dims}")
    h = {
        "dims": dims,
        "dtype": _SIDECAR_DTYPES[meta["dtype"]].newbyteorder("<"),
        "scl_slope": 0.0,
        "scl_inter": 0.0,
    }
    return Volume(_decode(raw.read_bytes(), h, raw), Spacing(*meta["spacing_mm"]))


def write_raw(volume: Volume, path, dtype=None) -> None:
    raw, meta_path = _sidecar(Path(path))
    dt = np.dtype(dtype) if dtype is not None else _storage_dtype(volume)
    names = {v: k for k, v in _SIDECAR_DTYPES.items()}
    if dt not in names:
        raise UnsupportedDtypeError(f"cannot store dtype {dt}")
    raw.write_bytes(np.asarray(volume.data).astype(dt.newbyteorder("<")).tobytes(order="F"))
    meta = {
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing.as_tuple()),
        "dtype": names[dt],
        "order": "x-fastest",
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def _is_raw(path: Path) -> bool:
    return path.suffix in (".raw", ".json")


def read_volume(path) -> Volume:
    path = Path(path)
    return read_raw(path) if _is_raw(path) else read_nifti(path)


def write_volume(volume: Volume, path, dtype=None) -> None:
    path = Path(path)
    if not path.parent.exists() or not os.access(path.parent, os.W_OK):
        raise OSError(f"cannot write to {path.parent}")
    if _is_raw(path):
        write_raw(volume, path, dtype)
    else:
        write_nifti(volume, path, dtype)


def read_labels(path) -> LabelVolume:
    v = read_volume(path)
    return LabelVolume(v.data, v.spacing)
