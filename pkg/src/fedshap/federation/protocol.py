"""Host <-> guest message framing.

Frame layout (all integers unsigned)::

    u32 BE   body length
    body:
      u8       message type
      u64 BE   session id
      u32 BE   token length, then token bytes
      u32 BE   payload count, then count x float64 LE

A body therefore has a fixed 17-byte header plus token and payload.
Tokens are only allowed on PARTIAL_REQ. The first token byte is its kind:
0x00 is SPECIAL_OFF (guest uses its reference values), 0x01 a keyed-hash
instance pseudonym.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ProtocolError

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct(">BQI")  # type, session, token length
COUNT = struct.Struct(">I")
LENGTH = struct.Struct(">I")
FIXED_BODY = HEADER.size + COUNT.size

TOKEN_SPECIAL_OFF = 0x00
TOKEN_PSEUDONYM = 0x01
SPECIAL_OFF = bytes([TOKEN_SPECIAL_OFF])


class MsgType(enum.IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    PARTIAL_REQ = 3
    PARTIAL_RESP = 4
    ERROR = 5
    BYE = 6


class ErrorCode(enum.IntEnum):
    BAD_FRAME = 1
    UNKNOWN_INSTANCE = 2
    NO_SESSION = 3
    UNEXPECTED = 4
    BAD_VERSION = 5


@dataclass(eq=False)
class ProtocolMessage:
    type: MsgType
    session_id: int
    token: bytes = b""
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.type = MsgType(self.type)
        if not 0 <= self.session_id < 1 << 64:
            raise ValueError("session id must fit in 64 bits")
        self.token = bytes(self.token)
        if self.token and self.type != MsgType.PARTIAL_REQ:
            raise ValueError(f"{self.type.name} cannot carry a token")
        self.payload = np.ascontiguousarray(self.payload, dtype="<f8").reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ProtocolMessage):
            return NotImplemented
        # bitwise payload comparison so NaNs round-trip as equal
        return (
            self.type == other.type
            and self.session_id == other.session_id
            and self.token == other.token
            and self.payload.tobytes() == other.payload.tobytes()
        )

    def __repr__(self):
        return (
            f"ProtocolMessage({self.type.name}, session={self.session_id:#x}, "
            f"token={self.token.hex()[:16]}, payload[{len(self.payload)}])"
        )

    @property
    def error_code(self) -> int | None:
        if self.type != MsgType.ERROR or not len(self.payload):
            return None
        return int(self.payload[0])


def error(session_id: int, code: ErrorCode) -> ProtocolMessage:
    return ProtocolMessage(MsgType.ERROR, session_id, payload=[float(code)])


def encode_body(msg: ProtocolMessage) -> bytes:
    return b"".join(
        (
            HEADER.pack(int(msg.type), msg.session_id, len(msg.token)),
            msg.token,
            COUNT.pack(len(msg.payload)),
            msg.payload.astype("<f8", copy=False).tobytes(),
        )
    )


def encode_frame(msg: ProtocolMessage, max_len: int = MAX_FRAME) -> bytes:
    body = encode_body(msg)
    if len(body) > max_len:
        raise ProtocolError(f"frame body of {len(body)} bytes exceeds limit {max_len}")
    return LENGTH.pack(len(body)) + body


def decode_body(body: bytes) -> ProtocolMessage:
    if len(body) < FIXED_BODY:
        raise ProtocolError("truncated frame header", ErrorCode.BAD_FRAME)
    type_byte, session_id, token_len = HEADER.unpack_from(body, 0)
    try:
        mtype = MsgType(type_byte)
    except ValueError:
        raise ProtocolError(f"unknown message type {type_byte}", ErrorCode.BAD_FRAME) from None
    pos = HEADER.size
    if len(body) < pos + token_len + COUNT.size:
        raise ProtocolError("truncated token", ErrorCode.BAD_FRAME)
    token = bytes(body[pos : pos + token_len])
    pos += token_len
    (count,) = COUNT.unpack_from(body, pos)
    pos += COUNT.size
    if len(body) != pos + 8 * count:
        raise ProtocolError("payload length does not match frame length", ErrorCode.BAD_FRAME)
    if token and mtype != MsgType.PARTIAL_REQ:
        raise ProtocolError(f"{mtype.name} cannot carry a token", ErrorCode.BAD_FRAME)
    payload = np.frombuffer(body, dtype="<f8", count=count, offset=pos).copy()
    return ProtocolMessage(mtype, session_id, token, payload)


def decode_frame(data: bytes, max_len: int = MAX_FRAME) -> ProtocolMessage:
    """Decode exactly one frame. Raises :class:`ProtocolError` on any malformation."""
    data = bytes(data)
    if len(data) < LENGTH.size:
        raise ProtocolError("truncated length prefix", ErrorCode.BAD_FRAME)
    (length,) = LENGTH.unpack_from(data, 0)
    if length > max_len:
        raise ProtocolError(f"frame length {length} exceeds limit {max_len}", ErrorCode.BAD_FRAME)
    if len(data) != LENGTH.size + length:
        raise ProtocolError(
            f"frame declares {length} body bytes, got {len(data) - LENGTH.size}", ErrorCode.BAD_FRAME
        )
    return decode_body(data[LENGTH.size :])
