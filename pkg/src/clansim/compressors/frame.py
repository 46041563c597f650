"""Versioned wire frame around a :class:`CompressedMessage`.

Header (24 bytes, little-endian)::

    0   u8   version (= 1)
    1   u8   compressor id
    2   u8   flags: bit0 value precision (1 = F16), bits1-4 dither bits
    3   u8   reserved (= 0)
    4   u32  tensor id
    8   u64  original element count d
    16  u64  payload length in bytes
"""

from __future__ import annotations

import struct

from ..errors import MalformedPayload, UnknownCompressorId, UnknownVersion
from .codecs import CompressedMessage, check_payload
from .kinds import HEADER_BYTES, CompressorKind, Precision, Tag

VERSION = 1
_HEADER = struct.Struct("<BBBBIQQ")
assert _HEADER.size == HEADER_BYTES


def _flags(kind: CompressorKind) -> int:
    flags = 1 if kind.value_precision == Precision.F16 else 0
    if kind.is_dither:
        flags |= (kind.bits & 0xF) << 1
    return flags


def encode_frame(msg: CompressedMessage, tensor_id: int) -> bytes:
    if not 0 <= tensor_id <= 0xFFFFFFFF:
        raise ValueError(f"tensor_id {tensor_id} does not fit in 32 bits")
    header = _HEADER.pack(VERSION, int(msg.kind.tag), _flags(msg.kind), 0,
                          tensor_id, msg.original_len, len(msg.payload))
    return header + bytes(msg.payload)


def decode_header(buf: bytes) -> tuple[int, int, int, int, int, int]:
    if len(buf) < HEADER_BYTES:
        raise MalformedPayload(f"frame truncated inside the {HEADER_BYTES}-byte header", offset=len(buf))
    version, comp_id, flags, reserved, tensor_id, d, payload_len = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnknownVersion(f"unsupported frame version {version}", offset=0)
    if comp_id not in Tag._value2member_map_:
        raise UnknownCompressorId(f"unknown compressor id {comp_id}", offset=1)
    if reserved != 0:
        raise MalformedPayload("reserved header byte is not zero", offset=3)
    if flags & ~0x1F:
        raise MalformedPayload(f"undefined flag bits set in {flags:#04x}", offset=2)
    if d < 1:
        raise MalformedPayload("original length must be >= 1", offset=8)
    return comp_id, flags, tensor_id, d, payload_len, HEADER_BYTES


def decode_frame(buf: bytes) -> tuple[int, CompressedMessage]:
    buf = bytes(buf)
    comp_id, flags, tensor_id, d, payload_len, start = decode_header(buf)
    end = start + payload_len
    if len(buf) < end:
        raise MalformedPayload(f"frame truncated: payload needs {payload_len} bytes, "
                               f"{len(buf) - start} present", offset=len(buf))
    if len(buf) > end:
        raise MalformedPayload("trailing bytes after payload", offset=end)
    payload = buf[start:end]
    tag = Tag(comp_id)
    precision = Precision(flags & 1)
    bits = (flags >> 1) & 0xF
    try:
        if tag in (Tag.TOP_K, Tag.RANDOM_K):
            if payload_len < 8:
                raise MalformedPayload("sparse payload shorter than its k field", offset=start + payload_len)
            k = struct.unpack_from("<Q", payload, 0)[0]
            if k < 1:
                raise MalformedPayload("sparse message with k = 0", offset=start)
            kind = CompressorKind(tag, k=int(k), value_precision=precision)
        elif tag in (Tag.LINEAR_DITHER, Tag.NATURAL_DITHER):
            kind = CompressorKind(tag, bits=bits, value_precision=precision)
        else:
            if bits:
                raise MalformedPayload("dither bits set on a non-dither frame", offset=2)
            kind = CompressorKind(tag, value_precision=precision)
    except MalformedPayload:
        raise
    except ValueError as exc:
        raise MalformedPayload(f"inconsistent header flags: {exc}", offset=2) from None
    msg = CompressedMessage(kind, d, payload)
    try:
        check_payload(msg)
    except MalformedPayload as exc:
        if exc.offset is None:
            raise
        raise MalformedPayload(str(exc).split(" (at byte")[0], offset=start + exc.offset) from None
    return tensor_id, msg
