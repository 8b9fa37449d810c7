"""Client runtime: handshake, local scene mirror, and origin mapping.

The mirror changes only when a server broadcast says so; locally sent
events take effect when their echo comes back.  That keeps every client's
view a pure function of the broadcast stream and makes convergence
checkable by structural equality.
"""

from __future__ import annotations

import base64
import socket
import threading
import uuid
from dataclasses import dataclass, field

from sara.errors import (
    BadToken,
    ConfigError,
    NotConnected,
    ProtocolViolation,
    SaraError,
    UnknownSession,
    UnknownUser,
)
from sara.events import (
    Ack,
    AddNode,
    Click,
    ConnectionMethod,
    ConnectToSession,
    Convention,
    DeviceProfile,
    Drag,
    EventEnvelope,
    EventRejected,
    IncrementalUpdate,
    NewUserConnection,
    RawInteraction,
    RemoveNode,
    SetSessionState,
    StateFormat,
    decode_event,
    decode_session_state,
    encode_event,
    encode_session_state,
    make_event,
)
from sara.net.mqtt import MqttClient
from sara.scene import (
    SessionStatus,
    Transform,
    compose_transforms,
    invert_transform,
    rotate_vector,
)

PROVIDER = "provider"
CONSUMER = "consumer"


@dataclass
class ManualPoint:
    """World origin picked by hand (or by any out-of-band agreement)."""

    origin: Transform = field(default_factory=Transform)


@dataclass
class MarkerSimulated:
    """World origin a fiducial-marker detector would have produced."""

    marker_id: str = ""
    origin: Transform = field(default_factory=Transform)


# ---------------------------------------------------------------------------
# client-side transports: send(text), close(); frames come back on on_text
# ---------------------------------------------------------------------------


class _TcpClientTransport:
    kind = ConnectionMethod.TCP

    def __init__(self, host: str, port: int, on_text, on_closed, timeout: float):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        self._on_text = on_text
        self._on_closed = on_closed
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, text: str) -> None:
        with self._lock:
            self._sock.sendall(text.encode("utf-8") + b"\n")

    def _read_loop(self) -> None:
        try:
            for raw in self._sock.makefile("rb"):
                line = raw[:-1] if raw.endswith(b"\n") else raw
                if line:
                    self._on_text(line)
        except (OSError, ValueError):
            pass
        finally:
            self._on_closed()

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _WsClientTransport:
    kind = ConnectionMethod.WEBSOCKET

    def __init__(self, host: str, port: int, on_text, on_closed, timeout: float):
        from websockets.sync.client import connect

        self._ws = connect(f"ws://{host}:{port}/", open_timeout=timeout)
        try:
            self._ws.socket.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        self._on_text = on_text
        self._on_closed = on_closed
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, text: str) -> None:
        self._ws.send(text)

    def _read_loop(self) -> None:
        try:
            for message in self._ws:
                data = message.encode("utf-8") if isinstance(message, str) else message
                self._on_text(data)
        except Exception:
            pass
        finally:
            self._on_closed()

    def close(self) -> None:
        try:
            self._ws.close()
        except Exception:
            pass


class _UdpClientTransport:
    kind = ConnectionMethod.UDP

    def __init__(self, host: str, port: int, on_text, on_closed, timeout: float):
        self._server = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("0.0.0.0", 0))
        self._on_text = on_text
        self._on_closed = on_closed
        self._running = True
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send(self, text: str) -> None:
        self._sock.sendto(text.encode("utf-8"), self._server)

    def _read_loop(self) -> None:
        try:
            while self._running:
                data, _addr = self._sock.recvfrom(65535)
                self._on_text(data)
        except OSError:
            pass
        finally:
            self._on_closed()

    def close(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass


class _MqttClientTransport:
    kind = ConnectionMethod.MQTT

    def __init__(self, host: str, port: int, client_id: str, session_id: str,
                 on_text, on_closed, timeout: float):
        self._session_topic = f"sara/v1/session/{session_id}/events"
        self._on_text = on_text
        self._on_closed = on_closed
        self._client = MqttClient(host, port, f"sara-client-{client_id}",
                                  on_message=self._on_message,
                                  connect_timeout=timeout)
        self._client.subscribe(f"sara/v1/client/{client_id}/inbox", qos=1)

    def send(self, text: str) -> None:
        self._client.publish(self._session_topic, text.encode("utf-8"), qos=1)

    def _on_message(self, topic: str, payload: bytes) -> None:
        self._on_text(payload)

    def close(self) -> None:
        self._client.close()
        self._on_closed()


# ---------------------------------------------------------------------------
# the client session
# ---------------------------------------------------------------------------


class SaraClient:
    """One connected user endpoint with a live scene mirror.

    Build instances with :meth:`connect`; the constructor only wires fields.
    """

    def __init__(self, user_id: str, session_id: str,
                 convention: Convention, device_profile: DeviceProfile,
                 reception_format: StateFormat, role: str):
        self.user_id = user_id
        self.session_id = session_id
        self.convention = convention
        self.device_profile = device_profile
        self.reception_format = reception_format
        self.role = role
        self.client_id: str | None = None
        self.mirror = SessionStatus()
        self.world_origin = Transform()
        self.last_state_blob: str | None = None  # raw text for OBJ receivers
        self.rejections: list[EventRejected] = []
        self.received_event_ids: list[str] = []
        self.events_received = 0
        self.events_sent = 0
        self._observers: list[object] = []
        self._mirror_lock = threading.RLock()
        self._transport = None
        self._closed = threading.Event()
        self._ack = threading.Event()
        self._ack_payload: Ack | None = None
        self._joined = threading.Event()
        self._state_ready = threading.Event()
        self._handshake_done = False
        self._handshake_error: EventRejected | None = None

    # -- construction --------------------------------------------------

    @classmethod
    def connect(cls, host: str, port: int,
                method: ConnectionMethod = ConnectionMethod.TCP,
                user_id: str = "", session_id: str = "",
                convention: Convention = Convention.RIGHT_HANDED,
                device_profile: DeviceProfile = DeviceProfile.DESKTOP_POINTER,
                reception_format: StateFormat = StateFormat.CUSTOM_JSON,
                role: str = CONSUMER,
                auth_token: str | None = None,
                client_id: str | None = None,
                timeout: float = 10.0) -> "SaraClient":
        """Full handshake: introduce the user, join the session, mirror state."""
        if not user_id or not session_id:
            raise ConfigError("connect needs a user_id and a session_id")
        client = cls(user_id, session_id, convention, device_profile,
                     reception_format, role)
        chosen_client_id = client_id or uuid.uuid4().hex
        if method == ConnectionMethod.TCP:
            client._transport = _TcpClientTransport(
                host, port, client._on_frame, client._on_transport_closed, timeout)
        elif method == ConnectionMethod.WEBSOCKET:
            client._transport = _WsClientTransport(
                host, port, client._on_frame, client._on_transport_closed, timeout)
        elif method == ConnectionMethod.UDP:
            client._transport = _UdpClientTransport(
                host, port, client._on_frame, client._on_transport_closed, timeout)
        else:
            client._transport = _MqttClientTransport(
                host, port, chosen_client_id, session_id,
                client._on_frame, client._on_transport_closed, timeout)
        try:
            client._send_env(make_event(user_id, "", NewUserConnection(
                user_id=user_id, connection_method=method,
                convention=convention, device_profile=device_profile,
                auth_token=auth_token, client_id=chosen_client_id)))
            if not client._ack.wait(timeout):
                raise NotConnected("no answer to the connection handshake")
            client._raise_handshake_error()
            client.client_id = client._ack_payload.client_id
            client._send_env(make_event(user_id, session_id, ConnectToSession(
                session_id=session_id, user_id=user_id,
                reception_format=reception_format)))
            if method == ConnectionMethod.UDP:
                # datagram members get no state push; the join echo confirms
                if not client._joined.wait(timeout):
                    client._raise_handshake_error()
                    raise NotConnected("the join was never confirmed")
            else:
                if not client._state_ready.wait(timeout):
                    client._raise_handshake_error()
                    raise NotConnected("no session state arrived")
        except BaseException:
            client.close()
            raise
        client._raise_handshake_error()
        client._handshake_done = True
        return client

    def _raise_handshake_error(self) -> None:
        rejected = self._handshake_error
        if rejected is None:
            return
        reason = rejected.reason
        prefix = reason.split(":", 1)[0]
        exc_by_prefix = {
            "bad-token": BadToken,
            "unknown-user": UnknownUser,
            "unknown-session": UnknownSession,
            "config-error": ConfigError,
        }
        raise exc_by_prefix.get(prefix, ProtocolViolation)(reason)

    # -- receiving -----------------------------------------------------

    def _on_frame(self, data: bytes) -> None:
        try:
            env = decode_event(data)
        except SaraError:
            return  # a hostile or garbled frame never kills the client
        self.events_received += 1
        self.received_event_ids.append(env.event_id)
        payload = env.payload
        if isinstance(payload, Ack):
            self._ack_payload = payload
            self._ack.set()
            return
        if isinstance(payload, EventRejected):
            self.rejections.append(payload)
            if not self._handshake_done:
                self._handshake_error = payload
                self._ack.set()
                self._joined.set()
                self._state_ready.set()
            self._notify("on_rejected", payload)
            return
        self._apply_broadcast(env)

    def _apply_broadcast(self, env: EventEnvelope) -> None:
        payload = env.payload
        with self._mirror_lock:
            if isinstance(payload, SetSessionState):
                if payload.format == StateFormat.CUSTOM_JSON:
                    try:
                        status = decode_session_state(payload.state_base64,
                                                      payload.format)
                    except SaraError:
                        return
                    self.mirror = status
                    self._state_ready.set()
                    self._notify("on_state_replaced", status)
                else:
                    self.last_state_blob = base64.b64decode(
                        payload.state_base64).decode("utf-8", "replace")
                    self._state_ready.set()
                    self._notify("on_state_blob", self.last_state_blob)
                return
            if isinstance(payload, ConnectToSession):
                if payload.user_id == self.user_id:
                    self._joined.set()
                self._notify("on_user_joined", payload.user_id)
                return
            if isinstance(payload, IncrementalUpdate):
                try:
                    self.mirror.apply_property_update(
                        payload.node_id, payload.property_path, payload.new_value)
                except SaraError:
                    return  # mirror lagging a filtered view; skip quietly
                self._notify("on_node_updated", payload.node_id,
                             payload.property_path, payload.new_value)
                return
            if isinstance(payload, AddNode):
                try:
                    self.mirror.attach_node(payload.parent_id, payload.node.copy())
                except SaraError:
                    return
                self._notify("on_node_added", payload.node)
                return
            if isinstance(payload, RemoveNode):
                try:
                    removed = self.mirror.detach_node(payload.node_id)
                except SaraError:
                    return
                self._notify("on_node_removed", payload.node_id, tuple(removed))
                return
        self._notify("on_event", env)

    def _on_transport_closed(self) -> None:
        self._closed.set()

    def _notify(self, hook: str, *args) -> None:
        for observer in list(self._observers):
            fn = getattr(observer, hook, None)
            if fn is not None:
                try:
                    fn(*args)
                except Exception:
                    pass  # an observer bug must not poison the feed

    def add_observer(self, observer: object) -> None:
        self._observers.append(observer)

    def remove_observer(self, observer: object) -> None:
        if observer in self._observers:
            self._observers.remove(observer)

    # -- sending -------------------------------------------------------

    def _send_env(self, env: EventEnvelope) -> str:
        if self._closed.is_set() or self._transport is None:
            raise NotConnected("the connection is closed")
        try:
            self._transport.send(encode_event(env))
        except Exception as exc:
            self._closed.set()
            raise NotConnected(f"send failed: {exc}") from None
        self.events_sent += 1
        return env.event_id

    def _send_payload(self, payload) -> str:
        return self._send_env(make_event(self.user_id, self.session_id, payload))

    def send_interaction(self, raw: RawInteraction) -> str:
        return self._send_payload(raw)

    def send_click(self, node_id: str, world_point=None, tool=None) -> str:
        return self._send_payload(Click(node_id=node_id,
                                        world_point=world_point, tool=tool))

    def send_drag(self, node_id: str, delta) -> str:
        return self._send_payload(Drag(node_id=node_id, delta=list(delta)))

    def send_update(self, node_id: str, property_path: str, value) -> str:
        return self._send_payload(IncrementalUpdate(
            node_id=node_id, property_path=property_path, new_value=value))

    def send_add_node(self, parent_id: str, node) -> str:
        return self._send_payload(AddNode(parent_id=parent_id, node=node))

    def send_remove_node(self, node_id: str) -> str:
        return self._send_payload(RemoveNode(node_id=node_id))

    def send_model_event(self, payload) -> str:
        return self._send_payload(payload)

    def inject_scene(self, status: SessionStatus) -> str:
        """Replace the whole session tree (subject to model validation)."""
        b64 = encode_session_state(status, StateFormat.CUSTOM_JSON)
        return self._send_payload(SetSessionState(
            format=StateFormat.CUSTOM_JSON, state_base64=b64))

    # -- world origin --------------------------------------------------

    def set_world_origin(self, policy) -> None:
        if isinstance(policy, (ManualPoint, MarkerSimulated)):
            origin = policy.origin
        elif isinstance(policy, Transform):
            origin = policy
        else:
            raise ConfigError("world origin must be a policy or a transform")
        problems = origin.violations()
        if problems:
            raise ConfigError("; ".join(problems))
        self.world_origin = origin.copy()

    def to_session(self, t: Transform) -> Transform:
        return compose_transforms(self.world_origin, t)

    def to_local(self, t: Transform) -> Transform:
        return compose_transforms(invert_transform(self.world_origin), t)

    def to_session_point(self, p) -> list[float]:
        o = self.world_origin
        scaled = [p[i] * o.scale[i] for i in range(3)]
        rotated = rotate_vector(o.rotation, scaled)
        return [rotated[i] + o.position[i] for i in range(3)]

    def to_local_point(self, p) -> list[float]:
        inv = invert_transform(self.world_origin)
        scaled = [p[i] - self.world_origin.position[i] for i in range(3)]
        rotated = rotate_vector(inv.rotation, scaled)
        return [rotated[i] * inv.scale[i] for i in range(3)]

    # -- bookkeeping ---------------------------------------------------

    def mirror_copy(self) -> SessionStatus:
        with self._mirror_lock:
            return self.mirror.copy()

    def stats(self) -> dict:
        return {"sent": self.events_sent, "received": self.events_received,
                "rejections": len(self.rejections),
                "revision": self.mirror.revision}

    @property
    def connected(self) -> bool:
        return not self._closed.is_set()

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
        self._closed.set()
