import numpy as np
import pytest

from fedshap.data import ADULT_GUEST_3, CONTINUOUS, Feature, FeaturePartition, FeatureSchema, NumericDataset, snap
from fedshap.errors import ChannelError, ProtocolError
from fedshap.explainer import build_parties
from fedshap.federation import (
    SPECIAL_OFF,
    ErrorCode,
    GuestServer,
    HostSession,
    InProcChannel,
    MsgType,
    ProtocolMessage,
    TcpChannel,
    federated_predict,
    guest_handle,
    pseudonymize_id,
)
from fedshap.knn import KnnModel

SCHEMA = FeatureSchema(tuple(Feature(f"f{j}", CONTINUOUS) for j in range(5)), "y", "1")
PART = FeaturePartition((0, 1), (2, 3, 4))


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(11)
    rows = snap(rng.integers(0, 5, (120, 5)) / 4)  # coarse grid -> many distance ties
    ds = NumericDataset(rows, rng.integers(0, 2, 120), SCHEMA, tuple(f"id{i}" for i in range(120)))
    train, test = ds.take(range(90)), ds.take(range(90, 120))
    host, guest = build_parties(train, test, PART, k=5, key=b"k1")
    model = KnnModel(train.rows, train.labels, 5)
    return train, test, host, guest, model


def session_for(guest, sid=7):
    return HostSession(InProcChannel(guest), sid).hello()


# -- pseudonyms -----------------------------------------------------------------


def test_pseudonyms():
    assert pseudonymize_id("row-1", b"key") == pseudonymize_id("row-1", b"key")
    assert pseudonymize_id("row-1", b"key") != pseudonymize_id("row-1", b"other")
    assert pseudonymize_id("row-1", b"key") != pseudonymize_id("row-2", b"key")
    tok = pseudonymize_id("row-1", b"key")
    assert len(tok) == 33 and tok[0] == 0x01 and SPECIAL_OFF == b"\x00"
    with pytest.raises(ValueError):
        pseudonymize_id("row-1", b"")


# -- guest_handle -----------------------------------------------------------------


def test_guest_requires_handshake(toy):
    guest = toy[3]
    reply = guest_handle(guest, ProtocolMessage(MsgType.PARTIAL_REQ, 99, SPECIAL_OFF))
    assert reply.type == MsgType.ERROR and reply.error_code == ErrorCode.NO_SESSION


def test_guest_rejects_wrong_version(toy):
    reply = guest_handle(toy[3], ProtocolMessage(MsgType.HELLO, 5, payload=[2.0]))
    assert reply.error_code == ErrorCode.BAD_VERSION


def test_special_off_is_stable(toy):
    guest = toy[3]
    s = session_for(guest)
    a, b = s.partials(SPECIAL_OFF), s.partials(SPECIAL_OFF)
    assert a.tobytes() == b.tobytes()
    assert len(a) == guest.n_train


def test_instance_at_reference_matches_special_off(toy):
    train, test, host, guest, _ = toy
    # find any instance whose guest block equals the guest reference, or plant one
    rid = "planted"
    guest.instances[pseudonymize_id(rid, b"k1")] = guest.reference.copy()
    s = session_for(guest)
    assert s.partials(pseudonymize_id(rid, b"k1")).tobytes() == s.partials(SPECIAL_OFF).tobytes()


def test_unknown_token(toy):
    s = session_for(toy[3])
    with pytest.raises(ProtocolError) as exc:
        s.partials(pseudonymize_id("nobody", b"k1"))
    assert exc.value.code == ErrorCode.UNKNOWN_INSTANCE


def test_malformed_frame_gets_error(toy):
    from fedshap.federation import decode_frame

    reply = decode_frame(toy[3].handle_frame(b"\x00\x00\x00\x02ab"))
    assert reply.type == MsgType.ERROR and reply.error_code == ErrorCode.BAD_FRAME


def test_bye_closes_session(toy):
    guest = toy[3]
    s = session_for(guest, sid=1234)
    s.close()
    reply = guest_handle(guest, ProtocolMessage(MsgType.PARTIAL_REQ, 1234, SPECIAL_OFF))
    assert reply.error_code == ErrorCode.NO_SESSION


def test_responses_hold_only_block_distances(toy):
    train, test, host, guest, _ = toy
    s = session_for(guest)
    rid = test.ids[0]
    got = s.partials(pseudonymize_id(rid, b"k1"))
    x_g = test.rows[0][list(PART.guest_indices)]
    expect = ((train.rows[:, list(PART.guest_indices)] - x_g) ** 2).sum(axis=1)
    assert np.array_equal(got, expect)


# -- federated_predict ------------------------------------------------------------


def test_federated_equals_centralized(toy):
    train, test, host, guest, model = toy
    s = session_for(guest)
    hcols, gcols = list(PART.host_indices), list(PART.guest_indices)
    for rid, x in zip(test.ids, test.rows):
        fed = federated_predict(host, s, x[hcols], host.token_for(rid))
        assert fed == model.predict_proba(x)
        off = federated_predict(host, s, x[hcols], SPECIAL_OFF)
        z = x.copy()
        z[gcols] = guest.reference
        assert off == model.predict_proba(z)


def test_guest_error_propagates(toy):
    _, test, host, guest, _ = toy
    s = session_for(guest)
    with pytest.raises(ProtocolError):
        federated_predict(host, s, test.rows[0][[0, 1]], pseudonymize_id("ghost", b"k1"))


def test_closed_channel(toy):
    ch = InProcChannel(toy[3])
    ch.close()
    with pytest.raises(ChannelError):
        HostSession(ch).hello()


def test_adult_federated_sample(workspace):
    part = FeaturePartition.from_guest_names(workspace.schema, ADULT_GUEST_3)
    host, guest = workspace.host(part), workspace.guest(part)
    hcols = list(part.host_indices)
    with HostSession(InProcChannel(guest)) as s:
        for i in range(0, len(workspace.test), 301):
            x = workspace.test.rows[i]
            tok = host.token_for(workspace.test.ids[i])
            assert federated_predict(host, s, x[hcols], tok) == workspace.model.predict_proba(x)


# -- TCP ----------------------------------------------------------------------------


@pytest.fixture
def tcp_guest(toy):
    server = GuestServer(toy[3])
    server.serve_in_thread()
    yield server
    server.shutdown()
    server.server_close()


def test_tcp_matches_inproc_bytes(toy, tcp_guest):
    train, test, host, guest, _ = toy
    tok = host.token_for(test.ids[3])

    def run(channel):
        s = HostSession(channel, session_id=0x0102030405060708)
        with s:
            s.partials(tok)
            s.partials(SPECIAL_OFF)
        return channel.transcript

    inproc = run(InProcChannel(guest, record=True))
    tcp_ch = TcpChannel("127.0.0.1", tcp_guest.port, record=True)
    tcp = run(tcp_ch)
    tcp_ch.close()
    assert inproc == tcp and len(tcp) == 4


def test_tcp_rejects_foreign_session(toy, tcp_guest):
    ch = TcpChannel("127.0.0.1", tcp_guest.port)
    HostSession(ch, session_id=1).hello()
    reply = ch.request(ProtocolMessage(MsgType.PARTIAL_REQ, 2, SPECIAL_OFF))
    assert reply.error_code == ErrorCode.NO_SESSION
    ch.close()


def test_tcp_unreachable():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(ChannelError):
        TcpChannel("127.0.0.1", port)


def test_tcp_server_gone_mid_session(toy):
    server = GuestServer(toy[3])
    server.serve_in_thread()
    ch = TcpChannel("127.0.0.1", server.port, timeout=5)
    s = HostSession(ch).hello()
    s.partials(SPECIAL_OFF)
    server.shutdown()
    server.server_close()
    ch.sock.shutdown(2)  # simulate the peer vanishing
    with pytest.raises(ChannelError):
        s.partials(SPECIAL_OFF)
