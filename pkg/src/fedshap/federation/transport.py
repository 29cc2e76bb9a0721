"""Channel bindings: in-process and TCP. Both move encoded frames."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from ..errors import ChannelError, ProtocolError
from .parties import GuestParty
from .protocol import LENGTH, MAX_FRAME, ErrorCode, MsgType, ProtocolMessage, decode_frame, encode_frame, error

log = logging.getLogger(__name__)


class InProcChannel:
    """Calls the guest directly, still through the byte codec.

    With ``record=True`` every (request frame, response frame) pair is kept
    in :attr:`transcript`.
    """

    def __init__(self, guest: GuestParty, record: bool = False):
        self.guest = guest
        self.record = record
        self.transcript: list[tuple[bytes, bytes]] = []
        self.closed = False

    def request(self, msg: ProtocolMessage) -> ProtocolMessage:
        if self.closed:
            raise ChannelError("channel is closed")
        frame = encode_frame(msg)
        reply = self.guest.handle_frame(frame)
        if self.record:
            self.transcript.append((frame, reply))
        return decode_frame(reply)

    def close(self) -> None:
        self.closed = True


def recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ChannelError("connection closed by peer")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_len: int = MAX_FRAME) -> bytes:
    head = recv_exact(sock, LENGTH.size)
    (length,) = LENGTH.unpack(head)
    if length > max_len:
        raise ProtocolError(f"frame length {length} exceeds limit {max_len}", ErrorCode.BAD_FRAME)
    return head + recv_exact(sock, length)


class TcpChannel:
    def __init__(self, host: str, port: int, timeout: float = 30.0, record: bool = False):
        self.record = record
        self.transcript: list[tuple[bytes, bytes]] = []
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ChannelError(f"cannot reach guest at {host}:{port}: {exc}") from exc

    def request(self, msg: ProtocolMessage) -> ProtocolMessage:
        frame = encode_frame(msg)
        try:
            self.sock.sendall(frame)
            reply = read_frame(self.sock)
        except OSError as exc:
            raise ChannelError(f"guest connection failed: {exc}") from exc
        if self.record:
            self.transcript.append((frame, reply))
        return decode_frame(reply)

    def close(self) -> None:
        self.sock.close()


class _SessionHandler(socketserver.BaseRequestHandler):
    """One connection carries one session; a frame for any other session id is refused."""

    def handle(self):
        guest: GuestParty = self.server.guest
        bound: int | None = None
        try:
            while True:
                try:
                    frame = read_frame(self.request)
                except ChannelError:
                    break
                except ProtocolError:
                    self.request.sendall(encode_frame(error(0, ErrorCode.BAD_FRAME)))
                    break
                try:
                    msg = decode_frame(frame)
                except ProtocolError:
                    self.request.sendall(encode_frame(error(0, ErrorCode.BAD_FRAME)))
                    continue
                if msg.type == MsgType.HELLO and bound is None:
                    bound = msg.session_id
                elif msg.session_id != bound:
                    self.request.sendall(encode_frame(error(msg.session_id, ErrorCode.NO_SESSION)))
                    continue
                reply = guest.handle(msg)
                self.request.sendall(encode_frame(reply))
                if msg.type == MsgType.BYE:
                    bound = None
                    break
        except OSError as exc:
            log.info("host connection lost: %s", exc.__class__.__name__)
        finally:
            # a vanished host must not leave its session open
            if bound is not None:
                guest.handle(ProtocolMessage(MsgType.BYE, bound))


class GuestServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, guest: GuestParty, address: tuple[str, int] = ("127.0.0.1", 0)):
        self.guest = guest
        super().__init__(address, _SessionHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
