"""Minimal NIfTI-1 reader/writer for axis-aligned volumes.

Supports .nii and .nii.gz, float32/float64/int16/int32/uint8/uint16 payloads and
diagonal (axis-aligned, positive-spacing) affines only, which is all this
package produces. Labels travel as a sibling file with an ``_labels`` suffix.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path

import numpy as np

from srrd.errors import InvalidArgumentError, VolumeIOError
from srrd.volume import Volume

HEADER_SIZE = 348
_MAGIC_OFFSET = 344
_DATATYPE_OFFSET = 70
_DIM_OFFSET = 40
_PIXDIM_OFFSET = 76
_SFORM_CODE_OFFSET = 254
_SROW_OFFSET = 280

_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64, 512: np.uint16}
_CODES = {np.dtype(v).str.lstrip("<>|="): k for k, v in _DTYPES.items()}


def _labels_path(path: Path) -> Path:
    name = path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return path.with_name(name[: -len(ext)] + "_labels" + ext)
    raise InvalidArgumentError(f"not a NIfTI path: {path}")


def _open(path: Path, mode: str):
    if path.name.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_array(path: Path) -> tuple[np.ndarray, tuple, tuple]:
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise VolumeIOError(f"{path}: truncated header ({len(raw)} bytes)", offset=0)
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    bo = "<"
    if sizeof_hdr != HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        bo = ">"
        if sizeof_hdr != HEADER_SIZE:
            raise VolumeIOError(f"{path}: bad sizeof_hdr (expected 348)", offset=0)
    magic = raw[_MAGIC_OFFSET:_MAGIC_OFFSET + 4]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeIOError(f"{path}: bad magic {magic!r}", offset=_MAGIC_OFFSET)

    dim = struct.unpack_from(f"{bo}8h", raw, _DIM_OFFSET)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeIOError(f"{path}: bad ndim {ndim}", offset=_DIM_OFFSET)
    shape = tuple(int(d) for d in dim[1:4])
    if ndim < 3:
        shape = shape[:ndim] + (1,) * (3 - ndim)
    if any(n <= 0 for n in shape):
        raise VolumeIOError(f"{path}: non-positive dim {shape}", offset=_DIM_OFFSET)

    (datatype,) = struct.unpack_from(f"{bo}h", raw, _DATATYPE_OFFSET)
    if datatype not in _DTYPES:
        raise VolumeIOError(f"{path}: unsupported datatype code {datatype}", offset=_DATATYPE_OFFSET)
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(bo)

    pixdim = struct.unpack_from(f"{bo}8f", raw, _PIXDIM_OFFSET)
    (vox_offset,) = struct.unpack_from(f"{bo}f", raw, 108)
    vox_offset = int(vox_offset) if vox_offset else HEADER_SIZE + 4
    (scl_slope,) = struct.unpack_from(f"{bo}f", raw, 112)
    (scl_inter,) = struct.unpack_from(f"{bo}f", raw, 116)

    (sform_code,) = struct.unpack_from(f"{bo}h", raw, _SFORM_CODE_OFFSET)
    if sform_code > 0:
        srows = np.array(struct.unpack_from(f"{bo}12f", raw, _SROW_OFFSET), dtype=np.float64)
        affine = srows.reshape(3, 4)
        lin = affine[:, :3]
        if np.abs(lin - np.diag(np.diag(lin))).max() > 1e-4 * max(1.0, np.abs(lin).max()):
            raise InvalidArgumentError(
                f"{path}: only axis-aligned grids are supported (non-diagonal sform)"
            )
        spacing = tuple(np.diag(lin).tolist())
        origin = tuple(affine[:, 3].tolist())
    else:
        spacing = tuple(float(p) for p in pixdim[1:4])
        origin = (0.0, 0.0, 0.0)
    if any(s <= 0 for s in spacing):
        raise InvalidArgumentError(f"{path}: non-positive spacing {spacing}")

    count = int(np.prod(shape))
    payload = raw[vox_offset:vox_offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise VolumeIOError(f"{path}: truncated data section", offset=vox_offset)
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    arr = arr.astype(dtype.newbyteorder("="), copy=True)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        arr = arr.astype(np.float32) * slope + scl_inter
    return arr, spacing, origin


def _write_array(arr: np.ndarray, spacing, origin, path: Path) -> None:
    arr = np.asarray(arr)
    key = np.dtype(arr.dtype).str.lstrip("<>|=")
    if key not in _CODES:
        raise InvalidArgumentError(f"unsupported dtype for NIfTI write: {arr.dtype}")
    code = _CODES[key]
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, _DIM_OFFSET, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, _DATATYPE_OFFSET, code)
    struct.pack_into("<h", header, 72, arr.dtype.itemsize * 8)  # bitpix
    struct.pack_into("<8f", header, _PIXDIM_OFFSET, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(HEADER_SIZE + 4))  # vox_offset
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<b", header, 123, 2)  # xyzt_units: mm
    struct.pack_into("<h", header, 252, 1)  # qform_code
    struct.pack_into("<h", header, _SFORM_CODE_OFFSET, 1)
    sx, sy, sz = spacing
    ox, oy, oz = origin
    struct.pack_into(
        "<12f", header, _SROW_OFFSET, sx, 0, 0, ox, 0, sy, 0, oy, 0, 0, sz, oz
    )
    # qform mirrors the sform: identity quaternion, same offsets
    struct.pack_into("<6f", header, 256, 0.0, 0.0, 0.0, ox, oy, oz)
    header[_MAGIC_OFFSET:_MAGIC_OFFSET + 4] = b"n+1\x00"
    with _open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(b"\x00\x00\x00\x00")  # no extensions
        fh.write(np.asfortranarray(arr).tobytes(order="F"))


def write_volume(vol: Volume, path) -> None:
    """Write ``vol`` (and labels, when present) as NIfTI-1."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = vol.data
    if data.dtype not in (np.float32, np.float64, np.int16, np.int32, np.uint8, np.uint16):
        data = data.astype(np.float32)
    _write_array(data, vol.spacing, vol.origin, path)
    if vol.labels is not None:
        _write_array(vol.labels.astype(np.uint8), vol.spacing, vol.origin, _labels_path(path))


def read_volume(path) -> Volume:
    """Read a NIfTI-1 volume; picks up the ``_labels`` sibling when present."""
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such file: {path}")
    data, spacing, origin = _read_array(path)
    labels = None
    lpath = _labels_path(path)
    if lpath.exists() and lpath != path:
        labels, lspacing, _ = _read_array(lpath)
        if labels.shape != data.shape:
            raise VolumeIOError(f"{lpath}: labels shape {labels.shape} != data shape {data.shape}")
        labels = labels.astype(np.int16)
    return Volume(data, spacing, origin, labels=labels)


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def read_json(path):
    return json.loads(Path(path).read_text())
