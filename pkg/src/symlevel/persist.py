"""Binary tensor blobs, text manifests, and stage input hashing.

Blob layout (little-endian throughout):
    magic   4 bytes  ASCII "SYMT"
    version u32      1
    dtype   u8       0 = float32, 1 = uint8
    ndim    u8
    dims    ndim x u32
    payload row-major tensor bytes

Manifests are UTF-8 text, one comma-separated record per line, with a
mandatory header line.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"SYMT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class BlobFormatError(ValueError):
    """Raised for malformed SYMT blobs; message carries the byte offset."""


class ManifestError(ValueError):
    """Raised for malformed manifests; message carries the line number."""


def write_blob(path: str | Path, array: np.ndarray) -> None:
    """Write an array as a SYMT blob. Accepts float32 or uint8 data."""
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    dtype_code = _DTYPE_CODES.get(np.dtype(arr.dtype))
    if dtype_code is None:
        raise ValueError(f"unsupported blob dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("too many dimensions for blob header")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<BB", dtype_code, arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(arr.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_blob(path: str | Path) -> np.ndarray:
    """Read a SYMT blob back into a numpy array."""
    data = Path(path).read_bytes()
    if len(data) < 10:
        raise BlobFormatError(f"{path}: truncated header (got {len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BlobFormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise BlobFormatError(f"{path}: unsupported version {version} at offset 4")
    dtype_code, ndim = struct.unpack_from("<BB", data, 8)
    if dtype_code not in _CODE_DTYPES:
        raise BlobFormatError(f"{path}: unknown dtype code {dtype_code} at offset 8")
    header_end = 10 + 4 * ndim
    if len(data) < header_end:
        raise BlobFormatError(f"{path}: truncated dims at offset {len(data)}")
    dims = struct.unpack_from(f"<{ndim}I", data, 10) if ndim else ()
    dtype = _CODE_DTYPES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise BlobFormatError(
            f"{path}: payload length {len(payload)} != expected {expected} "
            f"at offset {header_end}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_manifest(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_manifest(path: str | Path, expected_header: Sequence[str] | None = None) -> list[list[str]]:
    """Read a manifest, returning data rows (header excluded).

    Raises ManifestError naming the offending line for structural problems.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest (missing header)") from None
        if expected_header is not None and header != list(expected_header):
            raise ManifestError(
                f"{path}: line 1: header {header} != expected {list(expected_header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(
                    f"{path}: line {lineno}: {len(row)} fields, expected {len(header)}"
                )
            rows.append(row)
    return rows


def parse_float_field(path: str | Path, lineno: int, name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ManifestError(
            f"{path}: line {lineno}: field {name!r} is not numeric: {raw!r}"
        ) from None


def stage_hash(param_items: Sequence[tuple[str, str]], input_files: Sequence[str | Path] = ()) -> str:
    """Content hash of a pipeline stage: its parameters plus input file bytes."""
    h = hashlib.sha256()
    for key, value in sorted(param_items):
        h.update(key.encode())
        h.update(b"=")
        h.update(str(value).encode())
        h.update(b"\n")
    for path in sorted(str(p) for p in input_files):
        h.update(path.encode())
        h.update(Path(path).read_bytes())
    return h.hexdigest()


def stage_is_current(out_dir: str | Path, digest: str) -> bool:
    marker = Path(out_dir) / "stage_hash.txt"
    return marker.exists() and marker.read_text().strip() == digest


def record_stage(out_dir: str | Path, digest: str) -> None:
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "stage_hash.txt").write_text(digest + "\n")
