"""Parameter vectors: validation helpers and the portable binary format.

A model's weights travel through the whole system as a flat 1-D float64
numpy array.  The on-wire/on-disk encoding is a one-byte format version,
a little-endian uint64 length header, then the raw little-endian float64
values.  Stored object names keep a ``.pkl`` suffix for compatibility
with the path scheme used in the wire messages; the payload is this
format, not a pickle.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import NumericError, ShapeMismatchError

FORMAT_VERSION = 1

_HEADER = struct.Struct("<BQ")


def as_vector(values, *, context: str = "parameter vector") -> np.ndarray:
    """Coerce to a finite, contiguous 1-D float64 array."""
    vec = np.ascontiguousarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeMismatchError(f"{context} must be 1-D, got shape {vec.shape}")
    check_finite(vec, context=context)
    return vec


def check_finite(vec: np.ndarray, *, context: str = "parameter vector") -> None:
    """Raise NumericError naming the first non-finite index, if any."""
    bad = np.flatnonzero(~np.isfinite(vec))
    if bad.size:
        raise NumericError(
            f"{context} has non-finite value {vec[bad[0]]!r} at index {int(bad[0])}"
        )


def check_same_length(a: np.ndarray, b: np.ndarray, *, context: str = "vectors") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{context} have mismatched lengths {a.shape[0]} and {b.shape[0]}"
        )


def zeros(length: int) -> np.ndarray:
    if length <= 0:
        raise ShapeMismatchError(f"vector length must be positive, got {length}")
    return np.zeros(length, dtype=np.float64)


def serialize(vec: np.ndarray) -> bytes:
    """Encode a parameter vector in the binary weight format."""
    vec = as_vector(vec)
    return _HEADER.pack(FORMAT_VERSION, vec.shape[0]) + vec.astype("<f8").tobytes()


def deserialize(data: bytes) -> np.ndarray:
    """Decode the binary weight format back into a float64 vector."""
    if len(data) < _HEADER.size:
        raise NumericError(f"weight payload too short ({len(data)} bytes)")
    version, length = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise NumericError(f"unsupported weight format version {version}")
    expected = _HEADER.size + 8 * length
    if len(data) != expected:
        raise NumericError(
            f"weight payload length {len(data)} != expected {expected} for {length} values"
        )
    vec = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    check_finite(vec, context="deserialized weights")
    return vec


def is_weight_payload(data: bytes) -> bool:
    """True when ``data`` parses as the binary weight format."""
    try:
        deserialize(data)
    except NumericError:
        return False
    return True
