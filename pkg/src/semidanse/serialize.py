"""Single-file container format for datasets and parameter checkpoints.

Layout: 4-byte magic, u32 little-endian header length, UTF-8 JSON header,
raw little-endian float64 payload blocks in header order, and a trailing
CRC32 of everything before it. The format is deliberately dumb: language
portable, streamable, and bit-exact for round-trip tests.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .exceptions import ChecksumError, FormatVersionError

MAGIC = b"SDNC"
FORMAT_VERSION = 1
_DTYPE = "<f8"


def write_container(path: str, kind: str, meta: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write atomically (temp file + rename in the target directory)."""
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "blocks": [
            {"name": name, "shape": list(np.asarray(arr).shape), "dtype": _DTYPE}
            for name, arr in blocks
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).astype(_DTYPE).tobytes()
        for _, arr in blocks
    )
    body = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
            fh.write(struct.pack("<I", crc))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path: str, expected_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read and verify a container; returns (meta, {block name: array})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ChecksumError(f"{path}: not a container file")
    body, crc_bytes = raw[:-4], raw[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError(f"{path}: CRC mismatch, file is corrupted")
    (header_len,) = struct.unpack("<I", body[4:8])
    header = json.loads(body[8 : 8 + header_len].decode("utf-8"))
    version = header.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {version} is newer than supported {FORMAT_VERSION}"
        )
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ChecksumError(
            f"{path}: container kind {header.get('kind')!r}, expected {expected_kind!r}"
        )
    blocks: dict[str, np.ndarray] = {}
    offset = 8 + header_len
    for spec in header["blocks"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ChecksumError(f"{path}: truncated payload for block {spec['name']!r}")
        blocks[spec["name"]] = np.frombuffer(chunk, dtype=_DTYPE).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise ChecksumError(f"{path}: trailing bytes after declared blocks")
    return header["meta"], blocks
