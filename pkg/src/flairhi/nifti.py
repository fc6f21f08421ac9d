"""Single-file NIfTI-1 (.nii, optionally gzip-wrapped) volume and mask I/O."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import ShapeError, Volume3D, as_mask

HEADER_SIZE = 348
DATA_OFFSET = 352
MAGIC = b"n+1\x00"

# (struct format, field name); layout of nifti1.h
_FIELDS = [
    ("i", "sizeof_hdr"),
    ("10s", "data_type"),
    ("18s", "db_name"),
    ("i", "extents"),
    ("h", "session_error"),
    ("b", "regular"),
    ("b", "dim_info"),
    ("8h", "dim"),
    ("f", "intent_p1"),
    ("f", "intent_p2"),
    ("f", "intent_p3"),
    ("h", "intent_code"),
    ("h", "datatype"),
    ("h", "bitpix"),
    ("h", "slice_start"),
    ("8f", "pixdim"),
    ("f", "vox_offset"),
    ("f", "scl_slope"),
    ("f", "scl_inter"),
    ("h", "slice_end"),
    ("b", "slice_code"),
    ("b", "xyzt_units"),
    ("f", "cal_max"),
    ("f", "cal_min"),
    ("f", "slice_duration"),
    ("f", "toffset"),
    ("i", "glmax"),
    ("i", "glmin"),
    ("80s", "descrip"),
    ("24s", "aux_file"),
    ("h", "qform_code"),
    ("h", "sform_code"),
    ("f", "quatern_b"),
    ("f", "quatern_c"),
    ("f", "quatern_d"),
    ("f", "qoffset_x"),
    ("f", "qoffset_y"),
    ("f", "qoffset_z"),
    ("4f", "srow_x"),
    ("4f", "srow_y"),
    ("4f", "srow_z"),
    ("16s", "intent_name"),
    ("4s", "magic"),
]
_FORMAT = "".join(f for f, _ in _FIELDS)
assert struct.calcsize("<" + _FORMAT) == HEADER_SIZE

DATATYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    16: np.dtype("f4"),
    64: np.dtype("f8"),
}
DATATYPE_CODES = {"uint8": 2, "int16": 4, "float32": 16, "float64": 64}


class NiftiFormatError(ValueError):
    """Malformed or unsupported NIfTI-1 content, located by byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


def _unpack_header(raw: bytes, endian: str) -> dict:
    values = struct.unpack(endian + _FORMAT, raw[:HEADER_SIZE])
    hdr, i = {}, 0
    for fmt, name in _FIELDS:
        count = int(fmt[:-1]) if fmt[:-1] and fmt[-1] != "s" else 1
        if count == 1:
            hdr[name] = values[i]
        else:
            hdr[name] = list(values[i:i + count])
        i += count
    return hdr


def _pack_header(hdr: dict) -> bytes:
    values = []
    for fmt, name in _FIELDS:
        v = hdr[name]
        values.extend(v if isinstance(v, (list, tuple)) else [v])
    return struct.pack("<" + _FORMAT, *values)


def _blank_header(spacing) -> dict:
    hdr = _unpack_header(bytes(HEADER_SIZE), "<")
    sx, sy, sz = spacing
    hdr.update(
        sizeof_hdr=HEADER_SIZE,
        pixdim=[1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0],
        xyzt_units=2,  # millimetres
        sform_code=1,
        srow_x=[sx, 0.0, 0.0, 0.0],
        srow_y=[0.0, sy, 0.0, 0.0],
        srow_z=[0.0, 0.0, sz, 0.0],
    )
    return hdr


def _load_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiFormatError(f"corrupt gzip stream in {path}: {exc}", 0) from exc
    return raw


def read_volume(path) -> Volume3D:
    """Read a 3D NIfTI-1 image, applying scl_slope/scl_inter when the slope is nonzero."""
    raw = _load_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(
            f"{path}: file holds {len(raw)} bytes, shorter than the {HEADER_SIZE}-byte header",
            len(raw),
        )
    if struct.unpack("<i", raw[:4])[0] == HEADER_SIZE:
        endian = "<"
    elif struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
        endian = ">"
    else:
        raise NiftiFormatError(f"{path}: sizeof_hdr is not {HEADER_SIZE}", 0)
    hdr = _unpack_header(raw, endian)
    if hdr["magic"] != MAGIC:
        raise NiftiFormatError(f"{path}: bad magic {hdr['magic']!r}, expected {MAGIC!r}", 344)

    dim = hdr["dim"]
    ndim = dim[0]
    if not 3 <= ndim <= 7 or any(d != 1 for d in dim[4:ndim + 1]):
        raise NiftiFormatError(f"{path}: expected a 3D image, header dim is {dim}", 40)
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise NiftiFormatError(f"{path}: non-positive dimension in {shape}", 42)

    code = hdr["datatype"]
    if code not in DATATYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype code {code}", 70)
    dtype = DATATYPES[code].newbyteorder(endian)

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        offset = DATA_OFFSET
    count = shape[0] * shape[1] * shape[2]
    end = offset + count * dtype.itemsize
    if len(raw) < end:
        raise NiftiFormatError(
            f"{path}: payload truncated, need {end} bytes for shape {shape}, file has {len(raw)}",
            len(raw),
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    if dtype.kind == "f":
        bad = np.flatnonzero(~np.isfinite(flat))
        if bad.size:
            raise NiftiFormatError(
                f"{path}: non-finite value in payload", offset + int(bad[0]) * dtype.itemsize
            )
    data = flat.astype(np.float64).reshape(shape, order="F")
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0 and np.isfinite(slope):
        data = data * slope + (inter if np.isfinite(inter) else 0.0)

    spacing = tuple(abs(p) if np.isfinite(p) and p != 0 else 1.0 for p in hdr["pixdim"][1:4])
    return Volume3D(data, spacing, hdr)


def read_mask(path) -> np.ndarray:
    """Read a volume and threshold it at 0.5 into a boolean mask."""
    return np.asarray(read_volume(path)) >= 0.5


def write_volume(vol, path, datatype: str = "float32", like: Volume3D | None = None) -> None:
    """Write ``vol`` as single-file NIfTI-1.

    Orientation fields come from ``vol.header`` (or ``like.header``) when
    present; otherwise a plain diagonal sform built from the spacing is used.
    Paths ending in ``.gz`` are gzip-compressed with a zero mtime.
    """
    if datatype not in DATATYPE_CODES:
        raise ValueError(f"unsupported datatype {datatype!r}; use one of {sorted(DATATYPE_CODES)}")
    src = vol if isinstance(vol, Volume3D) else like
    data = np.asarray(vol)
    if data.dtype == bool:
        data = data.astype(np.uint8)
    if data.ndim != 3:
        raise ShapeError(f"expected a 3D array, got shape {data.shape}")
    code = DATATYPE_CODES[datatype]
    dtype = DATATYPES[code].newbyteorder("<")
    if dtype.kind in "ui":
        info = np.iinfo(dtype)
        if np.any(data != np.round(data)) or data.min() < info.min or data.max() > info.max:
            raise ValueError(f"values are not representable as {datatype}")

    spacing = src.spacing if src is not None else (1.0, 1.0, 1.0)
    if src is not None and src.header is not None:
        hdr = dict(src.header)
    else:
        hdr = _blank_header(spacing)
    pixdim = list(hdr["pixdim"])
    pixdim[1:4] = list(spacing)
    hdr.update(
        sizeof_hdr=HEADER_SIZE,
        dim=[3, data.shape[0], data.shape[1], data.shape[2], 1, 1, 1, 1],
        datatype=code,
        bitpix=dtype.itemsize * 8,
        pixdim=pixdim,
        vox_offset=float(DATA_OFFSET),
        scl_slope=0.0,
        scl_inter=0.0,
        cal_max=0.0,
        cal_min=0.0,
        magic=MAGIC,
    )
    payload = np.asarray(data, dtype=dtype).tobytes(order="F")
    blob = _pack_header(hdr) + bytes(DATA_OFFSET - HEADER_SIZE) + payload
    path = Path(path)
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


def write_mask(mask, path, like: Volume3D | None = None) -> None:
    write_volume(as_mask(mask).astype(np.uint8), path, "uint8", like=like)


@dataclass(frozen=True)
class AtlasPair:
    """WM and GM prior-probability maps on the clinical grid."""

    wm: np.ndarray
    gm: np.ndarray


def read_atlas(path, shape=None) -> np.ndarray:
    """Read a probability map, clamped into [0, 1]."""
    a = np.clip(np.asarray(read_volume(path)), 0.0, 1.0)
    if shape is not None and a.shape != tuple(shape):
        raise ShapeError(f"atlas {path} has shape {a.shape}, expected {tuple(shape)}")
    return a


def load_atlases(wm_path, gm_path, shape=None) -> AtlasPair:
    wm = read_atlas(wm_path, shape)
    gm = read_atlas(gm_path, wm.shape if shape is None else shape)
    return AtlasPair(wm, gm)
