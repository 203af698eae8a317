"""Minimal NIfTI-1 reader/writer for 3-D scalar volumes and masks.

Covers the single-file .nii / .nii.gz format: fixed 348-byte header,
scl_slope/scl_inter intensity scaling, pixdim spacing, and qform/sform
geometry (sform preferred when both are present). Data is stored in
Fortran voxel order per the standard.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .grids import GridError, Mask3, Volume3

_HDR_FMT = "i10s18sihcc8h3fhhhh8ffffhccffffii80s24shh6f4f4f4f16s4s"
_HDR_SIZE = 348

_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16),
                np.dtype(np.float32): (16, 32)}


class NiftiError(GridError):
    """Unreadable or unsupported NIfTI file."""


def _quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ], dtype=np.float64)


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes):
    if len(raw) < _HDR_SIZE:
        raise NiftiError("file too short for a NIfTI-1 header")
    for byteorder in ("<", ">"):
        fields = struct.unpack(byteorder + _HDR_FMT, raw[:_HDR_SIZE])
        if fields[0] == _HDR_SIZE:
            return byteorder, fields
    raise NiftiError("not a NIfTI-1 file (bad sizeof_hdr)")


def load_nifti(path: Union[str, Path], as_mask: bool = False) -> Union[Volume3, Mask3]:
    """Load a 3-D NIfTI-1 file as a Volume3 (HU) or, with as_mask, a Mask3.

    Images are rescaled by scl_slope/scl_inter; masks are thresholded at
    0.5 after scaling so float-typed label files load cleanly.
    """
    path = Path(path)
    try:
        raw = _read_bytes(path)
    except OSError as exc:
        raise NiftiError(f"unreadable file {path}: {exc}") from exc
    byteorder, f = _parse_header(raw)

    dim = f[7:15]
    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4:4 + max(0, ndim - 3)]):
        raise NiftiError(f"expected 3-D scalar data, got dim={dim[:ndim + 1]}")
    nx, ny, nz = (int(d) for d in dim[1:4])

    datatype, bitpix = int(f[19]), int(f[20])
    if datatype not in _DTYPES:
        raise NiftiError(f"unsupported NIfTI datatype code {datatype}")
    dt = np.dtype(_DTYPES[datatype]).newbyteorder(byteorder)
    if dt.itemsize * 8 != bitpix:
        raise NiftiError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = f[22:30]
    vox_offset = int(f[30])
    if vox_offset < _HDR_SIZE:
        raise NiftiError(f"vox_offset {vox_offset} overlaps the header")
    slope, inter = float(f[31]), float(f[32])
    if slope == 0.0:
        slope = 1.0
    qform_code, sform_code = int(f[44]), int(f[45])

    n = nx * ny * nz
    payload = raw[vox_offset:vox_offset + n * dt.itemsize]
    if len(payload) < n * dt.itemsize:
        raise NiftiError("truncated voxel data")
    data = np.frombuffer(payload, dtype=dt).reshape((nx, ny, nz), order="F")

    if sform_code > 0:
        srow = np.array([f[52:56], f[56:60], f[60:64]], dtype=np.float64)
        m = srow[:, :3]
        spacing = np.linalg.norm(m, axis=0)
        if np.any(spacing <= 0):
            raise NiftiError("invalid spacing in sform (zero-length column)")
        direction = m / spacing
        origin = srow[:, 3]
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        spacing = np.asarray(pixdim[1:4], dtype=np.float64)
        direction = _quaternion_to_matrix(float(f[46]), float(f[47]), float(f[48]))
        direction[:, 2] *= qfac
        origin = np.array([f[49], f[50], f[51]], dtype=np.float64)
    else:
        spacing = np.asarray(pixdim[1:4], dtype=np.float64)
        direction = np.eye(3)
        origin = np.zeros(3)

    if np.any(~np.isfinite(spacing)) or np.any(spacing <= 0):
        raise NiftiError(f"invalid spacing {tuple(spacing)}")

    scaled = data.astype(np.float64) * slope + inter
    if as_mask:
        return Mask3(scaled > 0.5, spacing=spacing, origin=origin, direction=direction)
    if not np.all(np.isfinite(scaled)):
        raise NiftiError("non-finite voxel values after slope/intercept scaling")
    return Volume3(scaled.astype(np.float32), spacing=spacing, origin=origin,
                   direction=direction)


def _encode_image(data: np.ndarray, dtype: str):
    if dtype == "float32":
        return data.astype(np.float32), 1.0, 0.0
    if dtype != "int16":
        raise NiftiError(f"unsupported image dtype {dtype!r} (use int16 or float32)")
    lo, hi = float(data.min()), float(data.max())
    if -32768.0 <= lo and hi <= 32767.0:
        return np.round(data).astype(np.int16), 1.0, 0.0
    # Wide-range data: affine-code into the int16 range.
    inter = (hi + lo) / 2.0
    slope = max((hi - lo) / 65000.0, np.finfo(np.float32).tiny)
    return np.round((data - inter) / slope).astype(np.int16), slope, inter


def save_nifti(grid: Union[Volume3, Mask3], path: Union[str, Path],
               dtype: str = "int16") -> None:
    """Write a Volume3 or Mask3 as a NIfTI-1 file (gzip when path ends .gz).

    Masks are stored as unsigned 8-bit; images as 16-bit signed with
    slope/intercept (default) or 32-bit float. Output bytes are
    deterministic (gzip mtime pinned to 0).
    """
    path = Path(path)
    if isinstance(grid, Mask3):
        data, slope, inter = grid.data.astype(np.uint8), 1.0, 0.0
    elif isinstance(grid, Volume3):
        data, slope, inter = _encode_image(grid.data.astype(np.float64), dtype)
    else:
        raise NiftiError(f"cannot save object of type {type(grid).__name__}")

    datatype, bitpix = _DTYPE_CODES[data.dtype]
    nx, ny, nz = grid.dims
    srow = grid.direction * np.asarray(grid.spacing)
    srow4 = np.column_stack([srow, np.asarray(grid.origin)]).astype(np.float32)

    header = struct.pack(
        "<" + _HDR_FMT,
        _HDR_SIZE, b"", b"", 0, 0, b"r", b"\x00",
        3, nx, ny, nz, 1, 1, 1, 1,            # dim
        0.0, 0.0, 0.0,                        # intent params
        0, datatype, bitpix, 0,
        1.0, *(float(s) for s in grid.spacing), 0.0, 0.0, 0.0, 0.0,  # pixdim
        352.0, float(slope), float(inter),
        0, b"\x00", bytes([10]),              # xyzt_units: mm | sec
        0.0, 0.0, 0.0, 0.0, 0, 0,
        b"tumorsynth", b"",
        0, 1,                                 # qform off, sform on
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *srow4[0], *srow4[1], *srow4[2],
        b"", b"n+1\x00",
    )
    body = header + b"\x00" * 4 + data.tobytes(order="F")

    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            # filename="" keeps the gzip header free of the output path so
            # identical grids produce identical bytes anywhere
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(body)
    else:
        path.write_bytes(body)
