"""PLT1 trajectory files.

Layout::

    8 bytes   magic b"PLTRAJ01"
    4 bytes   little-endian uint32 header length H
    H bytes   UTF-8 JSON header
    payload   (T, Ny, Nx, 2) row-major, little-endian f32 or f64

The header always carries ``version, T, Ny, Nx, channels, dtype, fs, dx,
dy, params, seed, normalization``; anything else the writer knows about
the trajectory goes under ``meta``.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import DimensionMismatchError, FormatError, TruncatedPayloadError
from .solver import Trajectory

MAGIC = b"PLTRAJ01"
VERSION = 1
CHANNELS = ["displacement", "velocity"]
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _header_for(traj, dtype):
    T, Ny, Nx, _ = traj.data.shape
    meta = dict(traj.meta)
    params = meta.pop("params", None)
    seed = meta.pop("seed", None)
    normalization = meta.pop("normalization", None)
    meta.pop("stored_dtype", None)
    dx, dy = meta.pop("dx", None), meta.pop("dy", None)
    if params:
        dx, dy = params["dx"], params["dy"]
    return {
        "version": VERSION,
        "T": T,
        "Ny": Ny,
        "Nx": Nx,
        "channels": CHANNELS,
        "dtype": dtype,
        "fs": float(traj.fs),
        "dx": dx,
        "dy": dy,
        "params": params,
        "seed": seed,
        "normalization": normalization,
        "meta": meta,
    }


def write_trajectory(traj, path, dtype="f32"):
    """Write ``traj`` to ``path``; returns the SHA-256 hex digest of the file bytes."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    header = canonical_json(_header_for(traj, dtype)).encode("utf-8")
    payload = np.ascontiguousarray(traj.data, dtype=_DTYPES[dtype])
    digest = hashlib.sha256()
    try:
        with open(path, "wb") as fh:
            for chunk in (MAGIC, struct.pack("<I", len(header)), header):
                fh.write(chunk)
                digest.update(chunk)
            mv = memoryview(payload).cast("B")
            fh.write(mv)
            digest.update(mv)
    except OSError as exc:
        raise OSError(f"cannot write trajectory file {path}: {exc}") from exc
    return digest.hexdigest()


def read_header(path):
    """Parse a PLT1 header; returns ``(header_dict, payload_offset)``."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise TruncatedPayloadError(f"{path}: file ends inside the header length field")
        (hlen,) = struct.unpack("<I", raw_len)
        raw = fh.read(hlen)
        if len(raw) != hlen:
            raise TruncatedPayloadError(f"{path}: header announces {hlen} bytes, found {len(raw)}")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON ({exc})") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")
    if header.get("dtype") not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype {header.get('dtype')!r}")
    if header.get("channels") != CHANNELS:
        raise DimensionMismatchError(f"{path}: expected channels {CHANNELS}, got {header.get('channels')}")
    return header, len(MAGIC) + 4 + hlen


def read_trajectory(path, frames=None, mmap=False, expected_grid=None):
    """Load a PLT1 file.

    ``frames`` is an optional slice of frame indices to load; ``mmap`` maps
    the payload instead of reading it (the returned data is then read-only
    and keeps the stored dtype).
    """
    header, offset = read_header(path)
    T, Ny, Nx = header["T"], header["Ny"], header["Nx"]
    if expected_grid is not None and tuple(expected_grid) != (Ny, Nx):
        raise DimensionMismatchError(f"{path}: grid {(Ny, Nx)} does not match expected {tuple(expected_grid)}")
    dt = _DTYPES[header["dtype"]]
    expected = T * Ny * Nx * 2 * dt.itemsize
    with open(path, "rb") as fh:
        fh.seek(0, 2)
        actual = fh.tell() - offset
    if actual < expected:
        raise TruncatedPayloadError(f"{path}: payload has {actual} bytes, header implies {expected}")
    if actual > expected:
        raise DimensionMismatchError(f"{path}: payload has {actual} bytes, header dims imply {expected}")
    arr = np.memmap(path, dtype=dt, mode="r", offset=offset, shape=(T, Ny, Nx, 2))
    if frames is not None:
        arr = arr[frames]
    data = arr if mmap else np.array(arr, dtype=np.float64)
    meta = dict(header.get("meta") or {})
    for key in ("params", "seed", "normalization"):
        meta[key] = header.get(key)
    meta["dx"], meta["dy"] = header.get("dx"), header.get("dy")
    meta["stored_dtype"] = header["dtype"]
    return Trajectory(data=data, fs=header["fs"], meta=meta)


def payload_nbytes(T, Ny, Nx, dtype="f32"):
    return T * Ny * Nx * 2 * _DTYPES[dtype].itemsize
