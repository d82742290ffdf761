"""MRC2014 reading and writing.

Only the subset needed here: modes 0, 1, 2 and 6 on read, mode 2 on write,
no compression.  Arrays are returned as float32 in ``(z, y, x)`` order
regardless of the file's axis mapping.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DTYPE, FormatError, NonFiniteValue, TruncatedFile, ValidationError

__all__ = ["MrcHeader", "read_mrc", "write_mrc", "read_header"]

HEADER_BYTES = 1024
MODES = {0: np.int8, 1: np.int16, 2: np.float32, 6: np.uint16}
STAMP_LE = b"\x44\x44\x00\x00"
STAMP_BE = b"\x11\x11\x00\x00"


@dataclass
class MrcHeader:
    nx: int
    ny: int
    nz: int
    mode: int = 2
    cella: tuple = (1.0, 1.0, 1.0)
    mapc: int = 1
    mapr: int = 2
    maps: int = 3
    dmin: float = 0.0
    dmax: float = 0.0
    dmean: float = 0.0
    rms: float = 0.0
    ispg: int = 1
    nsymbt: int = 0
    machst: bytes = STAMP_LE
    byteorder: str = "<"

    @property
    def voxel_size_angstrom(self) -> tuple:
        # cell lengths are per axis x, y, z
        return tuple(c / n if n else 0.0 for c, n in zip(self.cella, (self.nx, self.ny, self.nz)))

    @property
    def voxel_size_nm(self) -> float:
        return self.voxel_size_angstrom[0] / 10.0


def _byteorder(raw: bytes) -> str:
    stamp = raw[212:216]
    if stamp[:1] == b"\x44":
        return "<"
    if stamp[:1] == b"\x11":
        return ">"
    # unknown stamp: pick the order that gives a sane mode
    mode_le = struct.unpack("<i", raw[12:16])[0]
    return "<" if mode_le in MODES else ">"


def read_header(raw: bytes) -> MrcHeader:
    if len(raw) < HEADER_BYTES:
        raise TruncatedFile(f"file holds {len(raw)} bytes, shorter than the 1024-byte header")
    if raw[208:212] != b"MAP ":
        raise FormatError("missing 'MAP ' identifier")
    bo = _byteorder(raw)
    nx, ny, nz, mode = struct.unpack(bo + "4i", raw[0:16])
    cella = struct.unpack(bo + "3f", raw[40:52])
    mapc, mapr, maps = struct.unpack(bo + "3i", raw[64:76])
    dmin, dmax, dmean = struct.unpack(bo + "3f", raw[76:88])
    ispg, nsymbt = struct.unpack(bo + "2i", raw[88:96])
    (rms,) = struct.unpack(bo + "f", raw[216:220])
    if mode not in MODES:
        raise FormatError(f"unsupported MRC mode {mode}")
    if min(nx, ny, nz) < 1 or nsymbt < 0:
        raise FormatError(f"invalid dimensions {(nx, ny, nz)} or extended header size {nsymbt}")
    return MrcHeader(
        nx, ny, nz, mode, cella, mapc, mapr, maps, dmin, dmax, dmean, rms, ispg, nsymbt,
        bytes(raw[212:216]), bo,
    )


def read_mrc(path):
    """Read an MRC file into a float32 ``(z, y, x)`` array.

    Returns
    -------
    data : ndarray
    header : MrcHeader
    """
    raw = Path(path).read_bytes()
    h = read_header(raw)
    dtype = np.dtype(MODES[h.mode]).newbyteorder(h.byteorder)
    start = HEADER_BYTES + h.nsymbt
    count = h.nx * h.ny * h.nz
    if len(raw) < start + count * dtype.itemsize:
        raise TruncatedFile(
            f"expected {start + count * dtype.itemsize} bytes, file holds {len(raw)}"
        )
    # on disk: sections of rows of columns, i.e. axes (maps, mapr, mapc)
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(h.nz, h.ny, h.nx)
    order = (h.maps, h.mapr, h.mapc)
    if sorted(order) == [1, 2, 3] and order != (3, 2, 1):
        data = data.transpose([order.index(a) for a in (3, 2, 1)])
    elif sorted(order) != [1, 2, 3] and order != (0, 0, 0):
        raise FormatError(f"invalid axis mapping {order}")
    return data.astype(DTYPE), h


def write_mrc(path, data, voxel_size_nm: float = 1.0, ispg: int = 1) -> None:
    """Write a 3-D float array as a little-endian mode-2 MRC file.

    Output bytes depend only on the arguments.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.size == 0:
        raise ValidationError(f"need a non-empty 3-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("refusing to write non-finite data")
    if not voxel_size_nm > 0:
        raise ValidationError("voxel size must be positive")
    nz, ny, nx = arr.shape
    a = voxel_size_nm * 10.0
    f64 = arr.astype(np.float64)
    header = bytearray(HEADER_BYTES)
    struct.pack_into("<4i", header, 0, nx, ny, nz, 2)
    struct.pack_into("<3i", header, 16, 0, 0, 0)
    struct.pack_into("<3i", header, 28, nx, ny, nz)
    struct.pack_into("<3f", header, 40, nx * a, ny * a, nz * a)
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)
    struct.pack_into("<3i", header, 64, 1, 2, 3)
    struct.pack_into("<3f", header, 76, f64.min(), f64.max(), f64.mean())
    struct.pack_into("<2i", header, 88, ispg, 0)
    struct.pack_into("<i", header, 108, 20140)
    header[208:212] = b"MAP "
    header[212:216] = STAMP_LE
    struct.pack_into("<f", header, 216, f64.std())
    struct.pack_into("<i", header, 220, 0)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(arr.astype("<f4").tobytes())
