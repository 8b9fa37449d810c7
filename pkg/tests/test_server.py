"""End-to-end tests for the server pipeline over real loopback transports."""

import json
import socket
import time
import urllib.request

import pytest

from sara.clock import VirtualClock
from sara.client import SaraClient
from sara.errors import BadToken, PortInUse, UnknownSession
from sara.events import (
    Click,
    ConnectionMethod,
    Convention,
    DeviceProfile,
    GrantLayerAccess,
    NewUserConnection,
    SetSessionState,
    StateFormat,
    decode_event,
    encode_event,
    make_event,
)
from sara.net.mqtt import MiniBroker
from sara.scene import Mesh, Node, SessionStatus
from sara.server.service import CommunicationService, ServerConfig
from sara.users import UsersService

TRI = Mesh(vertices=[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
           triangles=[0, 1, 2],
           normals=[0.0, 0.0, 1.0] * 3)


@pytest.fixture()
def make_service(tmp_path):
    started = []

    def factory(session_config=None, clock=None, **overrides):
        overrides.setdefault("snapshot_dir", str(tmp_path / "snaps"))
        overrides.setdefault("users_db", str(tmp_path / "users.json"))
        cfg = ServerConfig(session_config=session_config or {},
                           snapshot_interval_s=0, **overrides)
        service = CommunicationService(cfg, clock=clock).start()
        started.append(service)
        return service

    yield factory
    for service in started:
        service.stop()


@pytest.fixture()
def clients():
    opened = []
    yield opened
    for client in opened:
        client.close()


def join(service, user_id, session_id="s1", method=ConnectionMethod.TCP,
         opened=None, **kw):
    port = {ConnectionMethod.TCP: service.tcp_port,
            ConnectionMethod.WEBSOCKET: service.ws_port,
            ConnectionMethod.UDP: service.udp_port}[method]
    client = SaraClient.connect("127.0.0.1", port, method=method,
                                user_id=user_id, session_id=session_id, **kw)
    if opened is not None:
        opened.append(client)
    return client


def quiesce(service, clients=(), timeout=10.0):
    deadline = time.monotonic() + timeout
    last = None
    while time.monotonic() < deadline:
        snap = (service.backlog(), tuple(c.events_received for c in clients))
        if snap[0] == 0 and snap == last:
            return True
        last = snap
        time.sleep(0.03)
    raise AssertionError("no quiescence within timeout")


class RawTcp:
    """Line-level TCP peer for protocol-violation tests."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5)
        self.reader = self.sock.makefile("rb")

    def send(self, env):
        self.sock.sendall(encode_event(env).encode("utf-8") + b"\n")

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def read_event(self, timeout=5.0):
        self.sock.settimeout(timeout)
        line = self.reader.readline()
        if not line:
            return None
        return decode_event(line.rstrip(b"\n"))

    def close(self):
        self.sock.close()


class TestHandshake:
    def test_connect_to_empty_session(self, make_service, clients):
        service = make_service()
        c = join(service, "u1", opened=clients)
        assert c.client_id
        assert list(c.mirror.nodes) == ["root"]

    def test_first_event_must_introduce_user(self, make_service):
        service = make_service()
        peer = RawTcp(service.tcp_port)
        peer.send(make_event("u1", "s1", Click(node_id="n1")))
        answer = peer.read_event()
        assert answer.type == "information.event_rejected"
        assert answer.payload.reason.startswith("protocol-violation")
        assert peer.read_event() is None  # server closed the connection
        peer.close()

    def test_connection_method_must_match_transport(self, make_service):
        service = make_service()
        peer = RawTcp(service.tcp_port)
        peer.send(make_event("u1", "", NewUserConnection(
            user_id="u1", connection_method=ConnectionMethod.WEBSOCKET,
            convention=Convention.RIGHT_HANDED,
            device_profile=DeviceProfile.DESKTOP_POINTER)))
        answer = peer.read_event()
        assert "connection_method" in answer.payload.reason
        assert peer.read_event() is None
        peer.close()

    def test_event_before_join_is_rejected(self, make_service):
        service = make_service()
        peer = RawTcp(service.tcp_port)
        peer.send(make_event("u1", "", NewUserConnection(
            user_id="u1", connection_method=ConnectionMethod.TCP,
            convention=Convention.RIGHT_HANDED,
            device_profile=DeviceProfile.DESKTOP_POINTER)))
        ack = peer.read_event()
        assert ack.type == "information.ack"
        peer.send(make_event("u1", "s1", Click(node_id="n1")))
        answer = peer.read_event()
        assert answer.payload.reason.startswith("not-in-session")
        peer.close()

    def test_malformed_frame_answered_not_fatal(self, make_service):
        service = make_service()
        peer = RawTcp(service.tcp_port)
        peer.send(make_event("u1", "", NewUserConnection(
            user_id="u1", connection_method=ConnectionMethod.TCP,
            convention=Convention.RIGHT_HANDED,
            device_profile=DeviceProfile.DESKTOP_POINTER)))
        peer.read_event()
        peer.send_raw(b"this is not json\n")
        answer = peer.read_event()
        assert answer.payload.reason.startswith("malformed-json")
        peer.send(make_event("u1", "s1", Click(node_id="n1")))
        assert peer.read_event() is not None  # connection still serves
        peer.close()

    def test_unknown_session_when_auto_create_disabled(self, make_service):
        service = make_service(auto_create_sessions=False)
        with pytest.raises(UnknownSession):
            join(service, "u1")

    def test_require_auth(self, make_service, tmp_path, clients):
        db = tmp_path / "auth-users.json"
        seed = UsersService(str(db))
        user_id, token = seed.register("provider")
        service = make_service(require_auth=True, users_db=str(db))
        with pytest.raises(BadToken):
            join(service, user_id, auth_token="wrong")
        c = join(service, user_id, auth_token=token, opened=clients)
        assert c.client_id

    def test_port_in_use(self, make_service):
        service = make_service()
        with pytest.raises(PortInUse):
            make_service(tcp_port=service.tcp_port)


class TestHealth:
    def test_health_reports_transports_and_sessions(self, make_service, clients):
        service = make_service()
        join(service, "u1", session_id="demo", opened=clients)
        quiesce(service)
        text = urllib.request.urlopen(
            f"http://127.0.0.1:{service.ws_port}/health").read().decode()
        lines = text.splitlines()
        assert lines[0] == "ok"
        assert lines[1] == "transports: tcp,websocket,udp"
        assert "sessions: 1" in lines
        assert any(line.startswith("session demo revision=") for line in lines)


class TestPipeline:
    def test_update_applies_and_broadcasts_to_all(self, make_service, clients):
        service = make_service()
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a, b])
        a.send_update("n1", "transform.position", [1.0, 0.0, 0.0])
        quiesce(service, [a, b])
        server_tree = service.session("s1").status
        assert server_tree.node("n1").transform.position == [1.0, 0.0, 0.0]
        for client in (a, b):
            assert client.mirror.same_tree(server_tree)
            assert client.mirror.node("n1").transform.position == [1.0, 0.0, 0.0]

    def test_tcp_and_websocket_clients_interoperate(self, make_service, clients):
        service = make_service()
        a = join(service, "u1", method=ConnectionMethod.TCP, opened=clients)
        b = join(service, "u2", method=ConnectionMethod.WEBSOCKET, opened=clients)
        a.send_add_node("root", Node(node_id="box", mesh=TRI.copy()))
        quiesce(service, [a, b])
        b.send_update("box", "name", "crate")
        quiesce(service, [a, b])
        assert a.mirror.same_tree(b.mirror)
        assert a.mirror.node("box").name == "crate"

    def test_echo_discipline_mirror_waits_for_broadcast(self, make_service,
                                                        clients):
        service = make_service()
        a = join(service, "u1", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        # until the echo arrives the mirror must not contain the node
        seen_locally_before_echo = a.mirror.has_node("n1")
        quiesce(service, [a])
        assert a.mirror.has_node("n1")
        assert seen_locally_before_echo is False

    def test_off_turn_interaction_rejected(self, make_service, clients):
        service = make_service(session_config={"models": [{"kind": "turn"}]})
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        quiesce(service, [a, b])
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a, b])
        b.send_click("n1")
        quiesce(service, [a, b])
        assert len(b.rejections) == 1
        assert b.rejections[0].reason.startswith("turn")
        a.send_click("n1")
        quiesce(service, [a, b])
        assert len(a.rejections) == 0

    def test_bad_property_path_rejected(self, make_service, clients):
        service = make_service()
        a = join(service, "u1", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a])
        a.send_update("n1", "transform.sideways", [1, 2, 3])
        quiesce(service, [a])
        assert len(a.rejections) == 1
        assert a.rejections[0].reason.startswith("unknown-property-path")

    def test_late_joiner_receives_current_state(self, make_service, clients):
        service = make_service()
        a = join(service, "u1", opened=clients)
        for i in range(3):
            a.send_add_node("root", Node(node_id=f"n{i}"))
        quiesce(service, [a])
        b = join(service, "u2", opened=clients)
        quiesce(service, [a, b])
        assert b.mirror.same_tree(service.session("s1").status)
        assert sorted(b.mirror.nodes) == ["n0", "n1", "n2", "root"]

    def test_broadcast_order_equals_acceptance_order(self, make_service,
                                                     clients):
        service = make_service()
        a = join(service, "u1", opened=clients)
        ids = [a.send_add_node("root", Node(node_id=f"n{i}")) for i in range(3)]
        bad = a.send_update("missing", "name", "x")  # rejected, must not appear
        quiesce(service, [a])
        order = service.broadcast_order("s1")
        assert order[-3:] == ids
        assert bad not in order

    def test_provider_inject_and_consumer_reset(self, make_service, clients):
        service = make_service()
        provider = join(service, "u1", role="provider", opened=clients)
        consumer = join(service, "u2", opened=clients)
        scene = SessionStatus()
        for i in range(4):
            scene.attach_node("root", Node(node_id=f"cube_{i}", mesh=TRI.copy()))
        provider.inject_scene(scene)
        quiesce(service, [provider, consumer])
        assert sorted(consumer.mirror.nodes) == sorted(scene.nodes)
        provider.inject_scene(SessionStatus())
        quiesce(service, [provider, consumer])
        assert list(consumer.mirror.nodes) == ["root"]


class TestConventions:
    def test_left_handed_client_sees_its_own_frame(self, make_service, clients):
        service = make_service()
        right = join(service, "u1", opened=clients)
        left = join(service, "u2", convention=Convention.LEFT_HANDED,
                    opened=clients)
        right.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [right, left])
        right.send_update("n1", "transform.position", [1.0, 2.0, 3.0])
        quiesce(service, [right, left])
        assert right.mirror.node("n1").transform.position == [1.0, 2.0, 3.0]
        assert left.mirror.node("n1").transform.position == [1.0, 2.0, -3.0]
        # a left-handed author writes in its own frame too
        left.send_update("n1", "transform.position", [4.0, 5.0, -6.0])
        quiesce(service, [right, left])
        assert service.session("s1").status.node("n1").transform.position == \
            [4.0, 5.0, 6.0]
        assert right.mirror.node("n1").transform.position == [4.0, 5.0, 6.0]
        assert left.mirror.node("n1").transform.position == [4.0, 5.0, -6.0]

    def test_mixed_convention_mirrors_agree_structurally(self, make_service,
                                                         clients):
        service = make_service()
        right = join(service, "u1", opened=clients)
        left = join(service, "u2", convention=Convention.LEFT_HANDED,
                    opened=clients)
        right.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [right, left])
        left.send_drag("n1", [0.5, 0.0, -0.25])
        quiesce(service, [right, left])
        assert set(left.mirror.nodes) == set(right.mirror.nodes)


class TestUdp:
    def test_udp_join_update_and_state_policy(self, make_service, clients):
        service = make_service()
        tcp = join(service, "u1", opened=clients)
        udp = join(service, "u2", method=ConnectionMethod.UDP, opened=clients)
        tcp.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [tcp, udp])
        assert udp.mirror.has_node("n1")  # structural events do cross UDP
        udp.send_update("n1", "name", "from-udp")
        quiesce(service, [tcp, udp])
        assert tcp.mirror.node("n1").name == "from-udp"
        # full state replacement is barred from the datagram transport
        udp.inject_scene(SessionStatus())
        quiesce(service, [tcp, udp])
        assert udp.rejections[-1].reason.startswith("udp-payload-policy")
        assert tcp.mirror.has_node("n1")

    def test_udp_member_gets_no_state_push(self, make_service, clients):
        service = make_service()
        provider = join(service, "u1", opened=clients)
        provider.send_add_node("root", Node(node_id="seed"))
        quiesce(service, [provider])
        udp = join(service, "u2", method=ConnectionMethod.UDP, opened=clients)
        quiesce(service, [provider, udp])
        # the pre-existing node never reached the UDP member
        assert not udp.mirror.has_node("seed")
        provider.send_add_node("root", Node(node_id="later"))
        quiesce(service, [provider, udp])
        assert udp.mirror.has_node("later")


class TestFormats:
    def test_obj_reception_format(self, make_service, clients):
        service = make_service()
        provider = join(service, "u1", opened=clients)
        provider.send_add_node("root", Node(node_id="tri", mesh=TRI.copy()))
        quiesce(service, [provider])
        obj_client = join(service, "u2", reception_format=StateFormat.OBJ,
                          opened=clients)
        quiesce(service, [provider, obj_client])
        blob = obj_client.last_state_blob
        assert blob is not None
        assert "o tri" in blob
        assert "v 0 0 0" in blob
        assert "f 1 2 3" in blob


class TestVisibility:
    LAYERED = {"models": [{"kind": "layer",
                           "layers": {"L1": []},
                           "access": {"u1": ["L1"]}}]}

    def test_layer_filtering_and_grant_refresh(self, make_service, clients):
        service = make_service(session_config=self.LAYERED)
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        a.send_add_node("root", Node(node_id="secret"))
        quiesce(service, [a, b])
        assert a.mirror.has_node("secret")
        assert not b.mirror.has_node("secret")  # no access, no broadcast
        a.send_model_event(GrantLayerAccess(layer_id="L1", user_id="u2"))
        quiesce(service, [a, b])
        # visibility widened, so the server re-sent b a full profiled state
        assert b.mirror.has_node("secret")

    def test_no_out_of_scope_node_ever_serialized(self, make_service, clients):
        service = make_service(session_config=self.LAYERED)
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        frames = []
        b.add_observer(type("Tap", (), {"on_event": staticmethod(frames.append)})())
        for i in range(5):
            a.send_add_node("root", Node(node_id=f"hidden{i}"))
            a.send_update(f"hidden{i}", "name", f"label{i}")
        quiesce(service, [a, b])
        assert set(b.mirror.nodes) == {"root"}
        assert all("hidden" not in repr(f) for f in frames)


class TestConflicts:
    def test_merge_mean_through_live_pipeline(self, make_service, clients):
        clock = VirtualClock(1000)
        service = make_service(
            session_config={"conflict_strategy": "MERGE_MEAN",
                            "conflict_window_ms": 100},
            clock=clock)
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a, b])
        a.send_update("n1", "transform.position", [1.0, 0.0, 0.0])
        quiesce(service, [a, b])
        clock.advance(40)  # inside the window
        b.send_update("n1", "transform.position", [3.0, 0.0, 0.0])
        quiesce(service, [a, b])
        assert service.session("s1").status.node("n1").transform.position == \
            [2.0, 0.0, 0.0]
        assert a.mirror.node("n1").transform.position == [2.0, 0.0, 0.0]
        assert b.mirror.node("n1").transform.position == [2.0, 0.0, 0.0]

    def test_outside_window_no_conflict(self, make_service, clients):
        clock = VirtualClock(1000)
        service = make_service(
            session_config={"conflict_strategy": "REJECT_SECOND",
                            "conflict_window_ms": 100},
            clock=clock)
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a, b])
        a.send_update("n1", "transform.position", [1.0, 0.0, 0.0])
        quiesce(service, [a, b])
        clock.advance(500)
        b.send_update("n1", "transform.position", [3.0, 0.0, 0.0])
        quiesce(service, [a, b])
        assert b.rejections == []
        assert service.session("s1").status.node("n1").transform.position == \
            [3.0, 0.0, 0.0]


class TestSnapshots:
    def test_stop_snapshots_and_restart_restores(self, make_service, tmp_path,
                                                 clients):
        snap_dir = str(tmp_path / "snaps")
        service = make_service(
            session_config={"models": [{"kind": "turn"}]},
            snapshot_dir=snap_dir)
        a = join(service, "u1", opened=clients)
        b = join(service, "u2", opened=clients)
        a.send_add_node("root", Node(node_id="n1"))
        quiesce(service, [a, b])
        a.send_update("n1", "transform.position", [5.0, 0.0, 0.0])
        quiesce(service, [a, b])
        before = service.session("s1").status.copy()
        holder_before = service.session("s1").model_config.turn_holder()
        # abrupt shutdown with members still attached: the snapshot is taken
        # before the sockets drop, so no leave effects leak into it
        service.stop()

        revived = make_service(snapshot_dir=snap_dir)
        restored = revived.session("s1")
        assert restored is not None
        assert restored.status == before  # tree and revision both survive
        assert restored.model_config.turn_holder() == holder_before
        c = join(revived, "u3", opened=clients)
        quiesce(revived, [c])
        assert c.mirror.same_tree(before)


class TestMqtt:
    def test_mqtt_end_to_end(self, make_service, clients):
        broker = MiniBroker()
        try:
            service = make_service(mqtt_url=f"mqtt://127.0.0.1:{broker.port}")
            bus = SaraClient.connect("127.0.0.1", broker.port,
                                     method=ConnectionMethod.MQTT,
                                     user_id="u1", session_id="s1")
            clients.append(bus)
            tcp = join(service, "u2", opened=clients)
            bus.send_add_node("root", Node(node_id="from-bus"))
            quiesce(service, [bus, tcp])
            assert tcp.mirror.has_node("from-bus")
            assert bus.mirror.has_node("from-bus")
            health = urllib.request.urlopen(
                f"http://127.0.0.1:{service.ws_port}/health").read().decode()
            assert "transports: tcp,websocket,udp,mqtt" in health
        finally:
            broker.close()
