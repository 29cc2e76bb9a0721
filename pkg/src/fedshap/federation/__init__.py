from .parties import (
    GuestParty,
    HostParty,
    HostSession,
    federated_predict,
    guest_handle,
    pseudonymize_id,
)
from .protocol import (
    MAX_FRAME,
    PROTOCOL_VERSION,
    SPECIAL_OFF,
    ErrorCode,
    MsgType,
    ProtocolMessage,
    decode_frame,
    encode_frame,
)
from .transport import GuestServer, InProcChannel, TcpChannel

__all__ = [
    "GuestParty", "HostParty", "HostSession", "federated_predict", "guest_handle",
    "pseudonymize_id", "MAX_FRAME", "PROTOCOL_VERSION", "SPECIAL_OFF", "ErrorCode", "MsgType",
    "ProtocolMessage", "decode_frame", "encode_frame", "GuestServer", "InProcChannel", "TcpChannel",
]
