"""TNSR tensor files: b"TNSR", u32 rank, rank x u32 dims, then row-major f64.
All integers and floats are little-endian."""
from pathlib import Path
from typing import Union

import numpy as np

from app.utils.errors import ConfigError

MAGIC = b"TNSR"


def encode_tensor(array) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = np.array([arr.ndim, *arr.shape], dtype="<u4")
    return MAGIC + header.tobytes() + arr.tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ConfigError("Not a TNSR tensor (bad magic bytes)")
    rank = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    dims = tuple(int(d) for d in np.frombuffer(blob, dtype="<u4", count=rank, offset=8))
    offset = 8 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) != offset + 8 * count:
        raise ConfigError(f"TNSR payload size mismatch for dims {dims}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)


def write_tensor(path: Union[str, Path], array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
