"""Binary container shared by field files, multivector batches and checkpoints.

Layout: ``b"GWSS"``, little-endian uint32 header length, UTF-8 JSON header, then
the raw little-endian arrays listed in ``header["arrays"]`` in order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GWSS"
_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}


def _code(dtype: np.dtype) -> str:
    for code, spec in _DTYPES.items():
        if np.dtype(spec) == np.dtype(dtype).newbyteorder("<"):
            return code
    raise TypeError(f"unsupported dtype {dtype}")


def write_container(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(header)
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code(arr.dtype)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(data)
    header["arrays"] = entries
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a container file")
    (size,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + size])
    offset = 8 + size
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
        offset += count * dt.itemsize
    return header, arrays


def precision_dtype(precision: str) -> np.dtype:
    return {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}[precision]


def save_multivectors(path: str | Path, x, precision: str = "f32") -> None:
    """Serialise an ``n x c x 16`` batch."""
    from .ga.algebra import BASIS_VERSION

    arr = np.asarray(x.detach().cpu().numpy() if hasattr(x, "detach") else x)
    if arr.ndim != 3 or arr.shape[-1] != 16:
        raise ValueError("multivector batch must have shape (n, c, 16)")
    header = {"n": arr.shape[0], "c": arr.shape[1], "precision": precision,
              "basis_version": BASIS_VERSION}
    write_container(path, header, {"data": arr.astype(precision_dtype(precision))})


def load_multivectors(path: str | Path) -> np.ndarray:
    from .ga.algebra import BASIS_VERSION

    header, arrays = read_container(path)
    if header.get("basis_version") != BASIS_VERSION:
        raise ValueError(f"basis version {header.get('basis_version')} is not supported")
    return arrays["data"]
