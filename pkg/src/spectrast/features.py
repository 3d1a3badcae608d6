"""Feature-matrix file IO.

Two on-disk formats are supported:

* FBNK binary: magic ``FBNK``, one version byte, two little-endian uint32
  dimensions (frames, bins), then row-major little-endian float32 values.
  Round-trips float32 matrices bit-exactly and is trivially parseable from
  any language.
* CSV: one row per frame, comma-separated values printed with 17 significant
  digits (lossless for float32 and float64).

The same container serves saliency maps (float64 score matrices are written
as float32 payloads).
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Spectrogram
from .errors import (
    DimensionMismatchError,
    FeatureIOError,
    MalformedHeaderError,
    NonFiniteValuesError,
)

FBNK_MAGIC = b"FBNK"
FBNK_VERSION = 1
_HEADER = struct.Struct("<4sBII")

FORMAT_BINARY = "binary"
FORMAT_CSV = "csv"


def encode_fbnk(matrix: np.ndarray) -> bytes:
    """Serialize a 2-D matrix to FBNK bytes (values cast to float32)."""
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    n_frames, n_bins = arr.shape
    header = _HEADER.pack(FBNK_MAGIC, FBNK_VERSION, n_frames, n_bins)
    return header + arr.astype("<f4").tobytes()


def decode_fbnk(blob: bytes) -> np.ndarray:
    """Parse FBNK bytes into a float32 matrix, validating header and payload."""
    if len(blob) < _HEADER.size:
        raise MalformedHeaderError(f"file too short for FBNK header ({len(blob)} bytes)")
    magic, version, n_frames, n_bins = _HEADER.unpack_from(blob)
    if magic != FBNK_MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}, expected {FBNK_MAGIC!r}")
    if version != FBNK_VERSION:
        raise MalformedHeaderError(f"unsupported FBNK version {version}")
    if n_frames < 1 or n_bins < 1:
        raise MalformedHeaderError(f"header declares empty matrix {n_frames}x{n_bins}")
    payload = blob[_HEADER.size:]
    expected = n_frames * n_bins * 4
    if len(payload) != expected:
        raise DimensionMismatchError(
            f"header declares {n_frames}x{n_bins} ({expected} payload bytes), "
            f"found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_bins)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValuesError("FBNK payload contains non-finite values")
    return data.astype(np.float32)


def _write_csv(matrix: np.ndarray, stream: io.TextIOBase) -> None:
    for row in matrix:
        stream.write(",".join(format(float(v), ".17g") for v in row))
        stream.write("\n")


def _read_csv(stream: io.TextIOBase) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise FeatureIOError(f"CSV line {lineno}: {exc}") from exc
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DimensionMismatchError(
                f"CSV line {lineno} has {len(values)} values, expected {width}"
            )
        rows.append(values)
    if not rows:
        raise MalformedHeaderError("CSV file contains no data rows")
    data = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValuesError("CSV payload contains non-finite values")
    return data


def load_matrix(path, fmt: str = FORMAT_BINARY) -> np.ndarray:
    """Load a raw float32 matrix from disk in the given format."""
    path = Path(path)
    if fmt == FORMAT_BINARY:
        return decode_fbnk(path.read_bytes())
    if fmt == FORMAT_CSV:
        with path.open("r", encoding="utf-8") as stream:
            return _read_csv(stream)
    raise ValueError(f"unknown feature format {fmt!r}")


def save_matrix(matrix: np.ndarray, path, fmt: str = FORMAT_BINARY) -> None:
    """Write a matrix to disk in the given format (values cast to float32)."""
    path = Path(path)
    if fmt == FORMAT_BINARY:
        path.write_bytes(encode_fbnk(matrix))
    elif fmt == FORMAT_CSV:
        arr = np.ascontiguousarray(matrix, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
        with path.open("w", encoding="utf-8") as stream:
            _write_csv(arr, stream)
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def infer_format(path) -> str:
    """CSV for .csv paths, binary otherwise."""
    return FORMAT_CSV if Path(path).suffix.lower() == ".csv" else FORMAT_BINARY


def load_features(path, fmt: Optional[str] = None) -> Spectrogram:
    """Load filterbank features from disk as a Spectrogram.

    The format defaults to the path's extension (.csv means CSV, anything
    else the FBNK binary container).
    """
    return Spectrogram(load_matrix(path, fmt or infer_format(path)))


def save_features(spec: Spectrogram, path, fmt: str = FORMAT_BINARY) -> None:
    """Write a Spectrogram to disk; binary round-trips bit-exactly."""
    save_matrix(spec.data, path, fmt)
