"""Minimal NIfTI-1 reader/writer for 3D volumes (.nii / .nii.gz).

Implements just enough of the single-file NIfTI-1 format to round-trip
scalar volumes with voxel spacing. Arrays are exposed in canonical
(D, H, W) axis order; on disk they are stored Fortran-ordered as
(W, H, D), which is the layout standard tools expect.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes
_DTYPE_TO_CODE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.int32): 8,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
    np.dtype(np.uint16): 512,
}
_CODE_TO_DTYPE = {code: dt for dt, code in _DTYPE_TO_CODE.items()}


def _is_gzip(raw: bytes) -> bool:
    return raw[:2] == b"\x1f\x8b"


def read_nifti(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a 3D NIfTI-1 volume.

    Returns (voxels, spacing) with voxels in (D, H, W) order and spacing
    as (mm_d, mm_h, mm_w). Raises on missing files, non-3D payloads, and
    malformed headers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    raw = path.read_bytes()
    if _is_gzip(raw):
        raw = gzip.decompress(raw)
    if len(raw) < VOX_OFFSET:
        raise ValueError(f"unreadable header: file too short ({len(raw)} bytes): {path}")

    byteorder = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise ValueError(f"unreadable header: bad sizeof_hdr in {path}")
        byteorder = ">"

    dim = struct.unpack_from(byteorder + "8h", raw, 40)
    (datatype,) = struct.unpack_from(byteorder + "h", raw, 70)
    pixdim = struct.unpack_from(byteorder + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(byteorder + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(byteorder + "2f", raw, 112)

    ndim = dim[0]
    # A trailing singleton 4th dimension is common and harmless.
    if ndim == 4 and dim[4] == 1:
        ndim = 3
    if ndim != 3:
        raise ValueError(f"expected 3 spatial dimensions, got {ndim} in {path}")

    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise ValueError(f"unreadable header: non-positive dims {dim[1:4]} in {path}")
    if datatype not in _CODE_TO_DTYPE:
        raise ValueError(f"unsupported NIfTI datatype code {datatype} in {path}")

    dtype = _CODE_TO_DTYPE[datatype].newbyteorder(byteorder)
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else VOX_OFFSET
    count = nx * ny * nz
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    if data.size != count:
        raise ValueError(f"truncated voxel data in {path}")
    vol = data.reshape((nx, ny, nz), order="F")
    # Disk order (W, H, D) -> canonical (D, H, W).
    vol = np.ascontiguousarray(vol.transpose(2, 1, 0))
    if vol.dtype.byteorder not in ("=", "|", "<"):
        vol = vol.astype(vol.dtype.newbyteorder("="))

    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        vol = vol.astype(np.float32) * slope + scl_inter

    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    if min(spacing) <= 0.0:
        spacing = tuple(s if s > 0.0 else 1.0 for s in spacing)
    return vol, spacing


def write_nifti(
    path: str | Path,
    voxels: np.ndarray,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> None:
    """Write a 3D volume in (D, H, W) order to a NIfTI-1 file.

    Gzip-compresses when the path ends in .gz; the gzip mtime is pinned
    to zero so identical volumes produce identical bytes.
    """
    path = Path(path)
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise ValueError(f"expected 3 spatial dimensions, got shape {voxels.shape}")
    if voxels.dtype not in _DTYPE_TO_CODE:
        raise ValueError(f"unsupported dtype for NIfTI output: {voxels.dtype}")

    nd, nh, nw = voxels.shape
    sd, sh, sw = (float(s) for s in spacing)

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nw, nh, nd, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _DTYPE_TO_CODE[voxels.dtype])
    struct.pack_into("<h", header, 72, voxels.dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, sw, sh, sd, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<b", header, 123, 2)  # xyzt_units: millimetres
    struct.pack_into("<2h", header, 252, 0, 1)  # qform_code, sform_code
    struct.pack_into("<4f", header, 280, sw, 0.0, 0.0, 0.0)
    struct.pack_into("<4f", header, 296, 0.0, sh, 0.0, 0.0)
    struct.pack_into("<4f", header, 312, 0.0, 0.0, sd, 0.0)
    struct.pack_into("<4s", header, 344, MAGIC)

    payload = bytes(header) + b"\x00\x00\x00\x00"
    payload += voxels.transpose(2, 1, 0).tobytes(order="F")

    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        with open(path, "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)
