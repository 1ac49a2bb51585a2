"""Minimal NIfTI-1 reader/writer for ``.nii`` and ``.nii.gz`` volumes.

Covers exactly what the engine needs: single-file NIfTI-1, scalar dtypes,
3-D grids (higher dims accepted when singleton), slope/intercept scaling on
read, sform-based geometry.  The affine is trusted verbatim; no axis
reorientation is performed.  Array axis order is ``(D, W, H)`` which maps
to NIfTI index axes ``(k, j, i)``; a C-contiguous array therefore matches
the file's i-fastest layout byte for byte.

Gzip members are written with ``mtime=0`` so identical volumes produce
bit-identical files.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352

_HEADER_DTD = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

_DTYPE_BY_CODE = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}
_CODE_BY_DTYPE = {np.dtype(v): k for k, v in _DTYPE_BY_CODE.items()}


class NiftiError(IOError):
    pass


@dataclass
class NiftiImage:
    """Decoded file content: raw grid plus geometry in (d, w, h) order."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    direction: tuple
    source_dtype: str


def _open_read(path: Path):
    raw = Path(path).open("rb")
    magic = raw.read(2)
    raw.seek(0)
    if magic == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=raw, mode="rb")
    return raw


def read(path) -> NiftiImage:
    """Read one NIfTI-1 volume; applies scl slope/intercept when set."""
    path = Path(path)
    with _open_read(path) as fh:
        blob = fh.read(HEADER_SIZE)
        if len(blob) != HEADER_SIZE:
            raise NiftiError(f"{path}: truncated header")
        hdr = np.frombuffer(blob, dtype=np.dtype(_HEADER_DTD))[0]
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            hdr = np.frombuffer(blob, dtype=np.dtype(_HEADER_DTD).newbyteorder())[0]
            if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
                raise NiftiError(f"{path}: not a NIfTI-1 file (sizeof_hdr)")
        magic = bytes(hdr["magic"])
        if not magic.startswith(b"n+1"):
            raise NiftiError(f"{path}: unsupported magic {magic!r} (single-file only)")

        ndim = int(hdr["dim"][0])
        dims = [int(d) for d in hdr["dim"][1 : 1 + ndim]]
        if ndim < 3:
            dims = dims + [1] * (3 - ndim)
        if any(d != 1 for d in dims[3:]):
            raise NiftiError(f"{path}: only 3-D volumes supported, dims {dims}")
        ni, nj, nk = dims[0], dims[1], dims[2]

        code = int(hdr["datatype"])
        if code not in _DTYPE_BY_CODE:
            raise NiftiError(f"{path}: unsupported datatype code {code}")
        dtype = np.dtype(_DTYPE_BY_CODE[code])
        if hdr["dim"].dtype.byteorder == ">":
            dtype = dtype.newbyteorder(">")

        fh.seek(int(hdr["vox_offset"]))
        need = ni * nj * nk * dtype.itemsize
        buf = fh.read(need)
        if len(buf) != need:
            raise NiftiError(f"{path}: truncated voxel data")
        # file is i-fastest; (nk, nj, ni) C-order == (D, W, H)
        data = np.frombuffer(buf, dtype=dtype).reshape(nk, nj, ni).copy()
        if data.dtype.byteorder == ">":
            data = data.astype(data.dtype.newbyteorder("="))

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    slope = slope if np.isfinite(slope) and slope != 0.0 else 1.0
    inter = inter if np.isfinite(inter) else 0.0
    if slope != 1.0 or inter != 0.0:
        data = data.astype(np.float32) * np.float32(slope) + np.float32(inter)

    if int(hdr["sform_code"]) > 0:
        aff = np.array(
            [hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]], dtype=np.float64
        )
        lin = aff[:, :3]
        norms = np.linalg.norm(lin, axis=0)
        if np.any(norms <= 0):
            raise NiftiError(f"{path}: degenerate sform")
        spacing_ijk = norms
        origin_xyz = aff[:, 3]
        dir_ijk = lin / norms
    else:
        spacing_ijk = np.abs(np.array(hdr["pixdim"][1:4], dtype=np.float64))
        origin_xyz = np.array(
            [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]], dtype=np.float64
        )
        dir_ijk = np.eye(3)

    # reverse (i, j, k) -> (d, w, h) ordering
    spacing = (float(spacing_ijk[2]), float(spacing_ijk[1]), float(spacing_ijk[0]))
    origin = (float(origin_xyz[2]), float(origin_xyz[1]), float(origin_xyz[0]))
    direction = tuple(tuple(float(x) for x in row) for row in dir_ijk[::-1, ::-1])
    return NiftiImage(data, spacing, origin, direction, str(np.dtype(_DTYPE_BY_CODE[code])))


def write(path, data: np.ndarray, spacing, origin=(0.0, 0.0, 0.0), direction=None) -> None:
    """Write a 3-D array in (D, W, H) order as a single-file NIfTI-1 volume."""
    path = Path(path)
    data = np.ascontiguousarray(data)
    if data.ndim != 3:
        raise NiftiError(f"can only write 3-D grids, got {data.shape}")
    if data.dtype not in _CODE_BY_DTYPE:
        raise NiftiError(f"unsupported dtype {data.dtype}")
    if data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))

    sd, sw, sh = (float(s) for s in spacing)
    od, ow, oh = (float(o) for o in origin)
    if direction is None:
        dir_dwh = np.eye(3)
    else:
        dir_dwh = np.asarray(direction, dtype=np.float64)
    dir_ijk = dir_dwh[::-1, ::-1]
    lin = dir_ijk * np.array([sh, sw, sd])

    hdr = np.zeros((), dtype=np.dtype(_HEADER_DTD))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, data.shape[2], data.shape[1], data.shape[0], 1, 1, 1, 1]
    hdr["datatype"] = _CODE_BY_DTYPE[data.dtype]
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"] = [1.0, sh, sw, sd, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = b"voxmix"
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["qoffset_x"] = oh
    hdr["qoffset_y"] = ow
    hdr["qoffset_z"] = od
    hdr["srow_x"] = [lin[0, 0], lin[0, 1], lin[0, 2], oh]
    hdr["srow_y"] = [lin[1, 0], lin[1, 1], lin[1, 2], ow]
    hdr["srow_z"] = [lin[2, 0], lin[2, 1], lin[2, 2], od]
    hdr["magic"] = b"n+1"

    payload = hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + data.tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.name.endswith(".gz"):
            with path.open("wb") as raw:
                # mtime and filename pinned so equal content gives equal bytes
                with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as gz:
                    gz.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise NiftiError(f"writing {path}: {exc}") from exc
