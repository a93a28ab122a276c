"""Binary model-file container shared by the neural and forest models.

Layout: magic "SCDK", format version (u16 LE), header length (u64 LE),
UTF-8 JSON header, then all parameter arrays as flat little-endian float64
with a manifest of (name, shape, byte offset) in the header.  Integer
payloads (tree structure, bootstrap indices) ride along as exact float64.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, VersionError

MAGIC = b"SCDK"
FORMAT_VERSION = 1


def write_container(path, kind: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d and
        # would silently change a scalar's shape across a save/load cycle
        arr = np.asarray(arrays[name], dtype="<f8")
        manifest.append([name, list(arr.shape), offset])
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    full_header = {"kind": kind, "manifest": manifest, **header}
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 14:
        raise FormatError("file too short to be a model container")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic bytes {data[:4]!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}, expected {FORMAT_VERSION}")
    (header_len,) = struct.unpack("<Q", data[6:14])
    if len(data) < 14 + header_len:
        raise FormatError("truncated header")
    try:
        header = json.loads(data[14 : 14 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    body = data[14 + header_len :]
    arrays = {}
    for name, shape, offset in header.pop("manifest"):
        n_bytes = int(np.prod(shape)) * 8 if shape else 8
        if offset + n_bytes > len(body):
            raise FormatError(f"truncated array {name!r}")
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(shape)), offset=offset)
        arrays[name] = arr.reshape(shape).copy()
    kind = header.pop("kind")
    return kind, header, arrays
