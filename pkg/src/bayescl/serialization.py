"""Binary and JSON encodings for parameter vectors, sample matrices and mixtures.

Binary blocks are a 16-byte little-endian header (4-byte magic, uint32 format
version, uint64 element count) followed by the raw float64 payload.
"""

import base64
from pathlib import Path
import struct

import numpy as np

FORMAT_VERSION = 1
PARAMS_MAGIC = b"BNNP"
SAMPLES_MAGIC = b"HMCS"
_HEADER = struct.Struct("<4sIQ")


def write_float_block(path: str | Path, magic: bytes, array: np.ndarray) -> None:
    """Write ``array`` (flattened, float64 little-endian) behind a header."""
    payload = np.ascontiguousarray(array, dtype="<f8").ravel()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, FORMAT_VERSION, payload.size))
        f.write(payload.tobytes())


def read_float_block(path: str | Path, magic: bytes) -> np.ndarray:
    """Read a block written by :func:`write_float_block`.

    Raises:
        ValueError: On wrong magic, unknown version or truncated payload

    """
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"Truncated header in {path}")
        found, version, count = _HEADER.unpack(header)
        if found != magic:
            raise ValueError(f"Bad magic {found!r} in {path}, expected {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"Unsupported format version {version} in {path}")
        payload = f.read()
    if len(payload) != 8 * count:
        raise ValueError(
            f"Truncated payload in {path}: expected {8 * count} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def encode_array(array: np.ndarray) -> dict:
    """Encode an array as a JSON-friendly dict with a base64 payload."""
    data = np.ascontiguousarray(array, dtype="<f8")
    return {
        "shape": list(data.shape),
        "dtype": "<f8",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(encoded: dict) -> np.ndarray:
    raw = base64.b64decode(encoded["data"])
    array = np.frombuffer(raw, dtype=encoded.get("dtype", "<f8"))
    return array.astype(np.float64).reshape(encoded["shape"])
