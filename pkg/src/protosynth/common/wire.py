"""Length-delimited record framing: repeated [varint length][message bytes].

Uses protobuf's own varint encoder and decoder.
"""

from collections.abc import Iterator
from typing import BinaryIO

from google.protobuf.internal.decoder import _DecodeVarint
from google.protobuf.internal.encoder import _VarintBytes

from protosynth.common.errors import CorpusError

MAX_VARINT_BYTES = 10


def write_delimited(stream: BinaryIO, payload: bytes) -> None:
    """Write one length-prefixed record."""
    stream.write(_VarintBytes(len(payload)))
    stream.write(payload)


def frame(payload: bytes) -> bytes:
    """Return the length-prefixed form of one record."""
    return _VarintBytes(len(payload)) + payload


def _read_length(stream: BinaryIO, offset: int) -> int | None:
    """Read a varint length prefix; None at a clean end of stream."""
    raw = bytearray()
    while True:
        byte = stream.read(1)
        if not byte:
            if raw:
                raise CorpusError(f"truncated length prefix at byte offset {offset}")
            return None
        raw += byte
        if not byte[0] & 0x80:
            break
        if len(raw) >= MAX_VARINT_BYTES:
            raise CorpusError(f"length prefix overflows at byte offset {offset}")
    value, _ = _DecodeVarint(bytes(raw), 0)
    return int(value)


def read_delimited(stream: BinaryIO) -> Iterator[bytes]:
    """Yield record payloads one at a time.

    Raises:
        CorpusError: on a truncated prefix or payload; framing cannot be
            resynchronised past that point.
    """
    offset = 0
    while True:
        length = _read_length(stream, offset)
        if length is None:
            return
        payload = stream.read(length)
        if len(payload) != length:
            raise CorpusError(
                f"truncated record at byte offset {offset}: "
                f"expected {length} bytes, got {len(payload)}"
            )
        offset += len(_VarintBytes(length)) + length
        yield payload
