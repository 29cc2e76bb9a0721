"""Host and guest parties for federated KNN prediction.

The guest never sends feature values. For each PARTIAL_REQ it returns one
partial squared distance per training row, computed over all of its
columns at once: either the looked-up instance's values or its reference
values (SPECIAL_OFF). The host adds its own partials, ranks, and votes.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import secrets
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..data import lower_median
from ..errors import ProtocolError
from ..knn import knn_vote, partial_sq_dist
from .protocol import (
    PROTOCOL_VERSION,
    SPECIAL_OFF,
    TOKEN_PSEUDONYM,
    ErrorCode,
    MsgType,
    ProtocolMessage,
    decode_frame,
    encode_frame,
    error,
)

log = logging.getLogger(__name__)


def pseudonymize_id(raw_id: str, key: bytes) -> bytes:
    """Keyed pseudonym: ``0x01 || HMAC-SHA256(key, raw_id)``."""
    if not key:
        raise ValueError("pseudonym key must be nonempty")
    digest = hmac.new(key, raw_id.encode("utf-8"), hashlib.sha256).digest()
    return bytes([TOKEN_PSEUDONYM]) + digest


def token_label(token: bytes) -> str:
    """Short printable handle for logs; reveals nothing beyond the token itself."""
    if token == SPECIAL_OFF:
        return "SPECIAL_OFF"
    return "tok:" + token[1:9].hex()


@dataclass
class GuestParty:
    """Guest state. Read-only after setup apart from the session table."""

    column_names: tuple[str, ...]
    train_rows: np.ndarray  # (n_train, g), aligned with the host's training order
    instances: Mapping[bytes, np.ndarray]  # pseudonym -> guest values
    reference: np.ndarray
    key: bytes
    _sessions: set = field(default_factory=set, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.train_rows = np.ascontiguousarray(self.train_rows, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if self.train_rows.shape[1] != len(self.reference):
            raise ValueError("reference length must equal the number of guest columns")

    @classmethod
    def setup(
        cls,
        column_names: Sequence[str],
        rows_by_id: Mapping[str, np.ndarray],
        train_ids: Sequence[str],
        key: bytes,
    ) -> "GuestParty":
        """Build from the guest's own vertical slice, keyed by raw instance id."""
        train = np.array([rows_by_id[i] for i in train_ids], dtype=np.float64)
        store = {pseudonymize_id(i, key): np.asarray(v, dtype=np.float64) for i, v in rows_by_id.items()}
        return cls(tuple(column_names), train, store, lower_median(train, axis=0), key)

    @property
    def n_train(self) -> int:
        return len(self.train_rows)

    def partials(self, values: np.ndarray) -> np.ndarray:
        return partial_sq_dist(range(len(values)), values, self.train_rows)

    def handle(self, msg: ProtocolMessage) -> ProtocolMessage:
        sid = msg.session_id
        if msg.type == MsgType.HELLO:
            if len(msg.payload) < 1 or msg.payload[0] != PROTOCOL_VERSION:
                return error(sid, ErrorCode.BAD_VERSION)
            with self._lock:
                self._sessions.add(sid)
            log.info("session %016x opened", sid)
            return ProtocolMessage(MsgType.HELLO_ACK, sid, payload=[PROTOCOL_VERSION, self.n_train])
        with self._lock:
            live = sid in self._sessions
        if not live:
            log.warning("session %016x rejected: no handshake", sid)
            return error(sid, ErrorCode.NO_SESSION)
        if msg.type == MsgType.BYE:
            with self._lock:
                self._sessions.discard(sid)
            log.info("session %016x closed", sid)
            return ProtocolMessage(MsgType.BYE, sid)
        if msg.type != MsgType.PARTIAL_REQ:
            return error(sid, ErrorCode.UNEXPECTED)
        if msg.token == SPECIAL_OFF:
            values = self.reference
        else:
            values = self.instances.get(msg.token)
            if values is None:
                log.warning("session %016x unknown %s", sid, token_label(msg.token))
                return error(sid, ErrorCode.UNKNOWN_INSTANCE)
        out = self.partials(values)
        log.debug("session %016x %s -> %d partials", sid, token_label(msg.token), len(out))
        return ProtocolMessage(MsgType.PARTIAL_RESP, sid, payload=out)

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg = decode_frame(frame)
        except ProtocolError:
            log.warning("malformed frame of %d bytes", len(frame))
            return encode_frame(error(0, ErrorCode.BAD_FRAME))
        return encode_frame(self.handle(msg))


def guest_handle(guest: GuestParty, msg: ProtocolMessage) -> ProtocolMessage:
    return guest.handle(msg)


@dataclass
class HostParty:
    column_names: tuple[str, ...]
    train_rows: np.ndarray  # (n_train, h)
    labels: np.ndarray
    k: int
    key: bytes
    reference: np.ndarray
    instances: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.train_rows = np.ascontiguousarray(self.train_rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if not 1 <= self.k <= len(self.train_rows):
            raise ValueError("k must satisfy 1 <= k <= n_train")

    @classmethod
    def setup(cls, column_names, rows_by_id, train_ids, labels, k, key) -> "HostParty":
        train = np.array([rows_by_id[i] for i in train_ids], dtype=np.float64)
        return cls(tuple(column_names), train, labels, k, key, lower_median(train, axis=0), dict(rows_by_id))

    @property
    def n_train(self) -> int:
        return len(self.train_rows)

    def token_for(self, raw_id: str) -> bytes:
        return pseudonymize_id(raw_id, self.key)

    def partials(self, x_host) -> np.ndarray:
        x_host = np.asarray(x_host, dtype=np.float64)
        return partial_sq_dist(range(len(x_host)), x_host, self.train_rows)


class HostSession:
    """One request/response session with a guest over a channel.

    ``channel`` must provide ``request(ProtocolMessage) -> ProtocolMessage``.
    """

    def __init__(self, channel, session_id: int | None = None):
        self.channel = channel
        self.session_id = secrets.randbits(64) if session_id is None else session_id
        self.guest_rows: int | None = None
        self.open = False

    def _call(self, msg: ProtocolMessage) -> ProtocolMessage:
        reply = self.channel.request(msg)
        if reply.session_id != self.session_id and reply.type != MsgType.ERROR:
            raise ProtocolError(f"reply for foreign session {reply.session_id:#x}")
        if reply.type == MsgType.ERROR:
            code = reply.error_code
            name = ErrorCode(code).name if code in ErrorCode._value2member_map_ else str(code)
            raise ProtocolError(f"guest error: {name}", code)
        return reply

    def hello(self) -> "HostSession":
        reply = self._call(ProtocolMessage(MsgType.HELLO, self.session_id, payload=[PROTOCOL_VERSION]))
        if reply.type != MsgType.HELLO_ACK:
            raise ProtocolError(f"expected HELLO_ACK, got {reply.type.name}")
        self.guest_rows = int(reply.payload[1])
        self.open = True
        return self

    def partials(self, token: bytes) -> np.ndarray:
        reply = self._call(ProtocolMessage(MsgType.PARTIAL_REQ, self.session_id, token))
        if reply.type != MsgType.PARTIAL_RESP:
            raise ProtocolError(f"expected PARTIAL_RESP, got {reply.type.name}")
        return reply.payload

    def close(self) -> None:
        if self.open:
            self.open = False
            self._call(ProtocolMessage(MsgType.BYE, self.session_id))

    def __enter__(self):
        return self.hello() if not self.open else self

    def __exit__(self, *exc):
        try:
            self.close()
        except ProtocolError:
            if exc[0] is None:
                raise


def federated_predict(host: HostParty, session: HostSession, x_host, guest_token: bytes) -> float:
    """Positive vote fraction of the k nearest rows under host + guest partial distances."""
    x_host = np.asarray(x_host, dtype=np.float64)
    if x_host.shape != (host.train_rows.shape[1],):
        raise ValueError(f"expected {host.train_rows.shape[1]} host values, got {x_host.size}")
    guest_part = session.partials(guest_token)
    if len(guest_part) != host.n_train:
        raise ProtocolError(f"guest returned {len(guest_part)} partials for {host.n_train} rows")
    total = host.partials(x_host) + guest_part
    return float(knn_vote(total, host.labels, host.k)[0])
