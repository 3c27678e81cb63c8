"""Length-prefixed JSON frames.

A frame is a 4-byte big-endian unsigned payload length N followed by N bytes
of UTF-8 JSON. Empty payloads and payloads over 16 MiB are protocol errors.
"""

import json
import struct

from ..errors import NasForgeError

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_FRAME_BYTES = 16 * 1024 * 1024


class ProtocolError(NasForgeError):
    pass


class OversizeFrame(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


def encode_payload(msg) -> bytes:
    return json.dumps(msg, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def encode_frame(msg) -> bytes:
    payload = encode_payload(msg)
    if not payload:
        raise ProtocolError("empty payload")
    if len(payload) > MAX_FRAME_BYTES:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME_BYTES}")
    return HEADER.pack(len(payload)) + payload


def check_length(n):
    if n == 0:
        raise ProtocolError("frame declares an empty payload")
    if n > MAX_FRAME_BYTES:
        raise OversizeFrame(f"frame declares {n} bytes, limit is {MAX_FRAME_BYTES}")


def parse_payload(payload: bytes):
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame payload: {exc}") from exc


def decode_frame(buf: bytes):
    """Decode exactly one frame from ``buf``; trailing bytes are an error."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedFrame(f"need {HEADER_SIZE} header bytes, got {len(buf)}")
    (n,) = HEADER.unpack_from(buf)
    check_length(n)
    if len(buf) < HEADER_SIZE + n:
        raise TruncatedFrame(f"frame declares {n} bytes, only {len(buf) - HEADER_SIZE} present")
    if len(buf) > HEADER_SIZE + n:
        raise ProtocolError(f"{len(buf) - HEADER_SIZE - n} trailing bytes after frame")
    return parse_payload(buf[HEADER_SIZE:])


def _recv_exactly(sock, n):
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            return b"".join(chunks)
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock):
    """Read one frame from a socket. Returns None on a clean EOF between frames."""
    header = _recv_exactly(sock, HEADER_SIZE)
    if not header:
        return None
    if len(header) < HEADER_SIZE:
        raise TruncatedFrame("connection closed inside a frame header")
    (n,) = HEADER.unpack(header)
    check_length(n)
    payload = _recv_exactly(sock, n)
    if len(payload) < n:
        raise TruncatedFrame("connection closed inside a frame payload")
    return parse_payload(payload)
