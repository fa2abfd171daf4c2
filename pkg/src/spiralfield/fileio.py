"""Versioned on-disk framing shared by the dataset and checkpoint files.

Layout (all multi-byte integers little-endian):

    line 1   ASCII  "#<magic> v<version>\\n"
    line 2   ASCII  JSON header, sorted keys, compact separators, "\\n"
    8 bytes  u64    payload length
    payload  raw bytes
    4 bytes  u32    CRC32 of every preceding byte

Corruption is reported through distinct exception classes so callers can
tell version drift, truncation, and bit rot apart.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path


class FileFormatError(Exception):
    """File is not a well-formed frame of the expected kind."""


class VersionMismatchError(FileFormatError):
    """Frame carries a format version this build does not read."""


class ChecksumError(FileFormatError):
    """Frame is structurally complete but its CRC32 does not match."""


class TruncatedFileError(FileFormatError):
    """File ends before the frame does."""


_MAX_HEADER_BYTES = 1 << 20


def write_framed(path, magic: str, version: int, header: dict, payload: bytes) -> None:
    """Write one frame. Header serialization is canonical, so identical
    inputs produce byte-identical files."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    body = b"#%s v%d\n" % (magic.encode("ascii"), version) + head + b"\n"
    body += struct.pack("<Q", len(payload)) + payload
    crc = zlib.crc32(body)
    Path(path).write_bytes(body + struct.pack("<I", crc))


def probe(path) -> tuple[str, int]:
    """Read only the magic line and return (magic, version).

    Cheap kind detection; does not verify the rest of the frame.
    """
    with open(path, "rb") as f:
        line = f.readline(256)
    if not line.startswith(b"#") or not line.endswith(b"\n"):
        raise FileFormatError(f"{path}: missing magic line")
    try:
        text = line[1:-1].decode("ascii")
        magic, ver = text.rsplit(" v", 1)
        return magic, int(ver)
    except (UnicodeDecodeError, ValueError):
        raise FileFormatError(f"{path}: unreadable magic line") from None


def read_framed(path, magic: str, supported_version: int) -> tuple[dict, bytes]:
    """Read and verify one frame, returning (header, payload)."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or nl > _MAX_HEADER_BYTES:
        raise FileFormatError(f"{path}: missing magic line")
    prefix = b"#" + magic.encode("ascii") + b" v"
    if not data[: nl].startswith(prefix):
        raise FileFormatError(f"{path}: not a {magic} file")
    try:
        version = int(data[len(prefix):nl])
    except ValueError:
        raise FileFormatError(f"{path}: unreadable version field") from None
    if version != supported_version:
        raise VersionMismatchError(
            f"{path}: format version {version}, this build reads version {supported_version}"
        )
    nl2 = data.find(b"\n", nl + 1)
    if nl2 < 0:
        raise TruncatedFileError(f"{path}: header line is incomplete")
    size_end = nl2 + 1 + 8
    if len(data) < size_end:
        raise TruncatedFileError(f"{path}: payload length field is incomplete")
    (payload_len,) = struct.unpack("<Q", data[nl2 + 1: size_end])
    payload_end = size_end + payload_len
    if len(data) < payload_end + 4:
        raise TruncatedFileError(
            f"{path}: expected {payload_end + 4} bytes, file has {len(data)}"
        )
    if len(data) > payload_end + 4:
        raise FileFormatError(f"{path}: {len(data) - payload_end - 4} trailing bytes")
    (stored_crc,) = struct.unpack("<I", data[payload_end:])
    actual_crc = zlib.crc32(data[:payload_end])
    if stored_crc != actual_crc:
        raise ChecksumError(f"{path}: CRC32 mismatch ({actual_crc:08x} != {stored_crc:08x})")
    try:
        header = json.loads(data[nl + 1: nl2].decode("ascii"))
    except (ValueError, UnicodeDecodeError):
        raise FileFormatError(f"{path}: header is not valid JSON") from None
    return header, data[size_end:payload_end]
