"""Wire message format.

One message is::

    tag (1 byte) | session_id (8 bytes BE) | round (4 bytes BE)
    | payload length (4 bytes BE) | payload

and the payload is a sequence of fields, each a 4-byte big-endian length
followed by that many big-endian bytes of a nonnegative integer. Unknown
tags, truncation, oversized declarations, and trailing bytes all raise
:class:`CodecError`; no input crashes the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import CodecError

KEY_MATERIAL = 0x01
TASK = 0x02
BUDGET = 0x03
SUBMIT = 0x04
DIV_REQ = 0x05
DIV_RESP = 0x06
MUL_REQ = 0x07
MUL_RESP = 0x08
DIV_BATCH_REQ = 0x09
DIV_BATCH_RESP = 0x0A
AVG_RELEASE = 0x0B
FINAL_MODEL = 0x0C
REWARD_RELEASE = 0x0D
TIMER = 0x0E

TAG_NAMES = {
    KEY_MATERIAL: "key_material",
    TASK: "task",
    BUDGET: "budget",
    SUBMIT: "submit",
    DIV_REQ: "div_req",
    DIV_RESP: "div_resp",
    MUL_REQ: "mul_req",
    MUL_RESP: "mul_resp",
    DIV_BATCH_REQ: "div_batch_req",
    DIV_BATCH_RESP: "div_batch_resp",
    AVG_RELEASE: "avg_release",
    FINAL_MODEL: "final_model",
    REWARD_RELEASE: "reward_release",
    TIMER: "timer",
}

_HEADER_LEN = 1 + 8 + 4 + 4
_MAX_FIELD_BYTES = 1 << 20  # no legitimate integer is a megabyte


@dataclass(frozen=True)
class WireMessage:
    """Typed envelope; fields are nonnegative integers."""

    tag: int
    session_id: int
    round_index: int
    fields: tuple

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(int(f) for f in self.fields))

    @property
    def tag_name(self):
        return TAG_NAMES.get(self.tag, f"0x{self.tag:02x}")


def encode_message(msg: WireMessage):
    if msg.tag not in TAG_NAMES:
        raise CodecError(f"unknown tag {msg.tag}")
    if not 0 <= msg.session_id < 1 << 64:
        raise CodecError("session id out of range")
    if not 0 <= msg.round_index < 1 << 32:
        raise CodecError("round index out of range")
    parts = []
    for f in msg.fields:
        if f < 0:
            raise CodecError("fields must be nonnegative")
        b = f.to_bytes((f.bit_length() + 7) // 8 or 1, "big")
        parts.append(len(b).to_bytes(4, "big") + b)
    payload = b"".join(parts)
    return (
        bytes([msg.tag])
        + msg.session_id.to_bytes(8, "big")
        + msg.round_index.to_bytes(4, "big")
        + len(payload).to_bytes(4, "big")
        + payload
    )


def decode_message(data):
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise CodecError("expected bytes")
    data = bytes(data)
    if len(data) < _HEADER_LEN:
        raise CodecError("truncated header")
    tag = data[0]
    if tag not in TAG_NAMES:
        raise CodecError(f"unknown tag {tag}")
    session_id = int.from_bytes(data[1:9], "big")
    round_index = int.from_bytes(data[9:13], "big")
    payload_len = int.from_bytes(data[13:17], "big")
    if len(data) != _HEADER_LEN + payload_len:
        raise CodecError("declared payload length does not match body")
    fields = []
    offset = _HEADER_LEN
    end = len(data)
    while offset < end:
        if offset + 4 > end:
            raise CodecError("truncated field length")
        flen = int.from_bytes(data[offset:offset + 4], "big")
        offset += 4
        if flen == 0 or flen > _MAX_FIELD_BYTES:
            raise CodecError("field length out of range")
        if offset + flen > end:
            raise CodecError("truncated field body")
        fields.append(int.from_bytes(data[offset:offset + flen], "big"))
        offset += flen
    return WireMessage(tag, session_id, round_index, tuple(fields))
