"""Authoritative session service.

Holds the connection registry, one serial worker per session (the only
writer of that session's state), the seven-step event pipeline, profiled
broadcast, and snapshot durability.  Transports feed the workers
concurrently; rejections are answers, not faults.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from dataclasses import dataclass, field

from sara.clock import Clock, SystemClock
from sara.collab import CompositeModel
from sara.conflicts import DEFAULT_WINDOW_MS, ConflictDetector, ResolutionStrategy, resolve
from sara.errors import (
    BadToken,
    ConfigError,
    MergeShapeMismatch,
    SaraError,
    UdpPayloadPolicy,
    UnknownGesture,
    UnknownUser,
)
from sara.events import (
    MODEL_EVENT_TYPES,
    SYSTEM_SENDER,
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
    SetSubordinatePermissions,
    StateFormat,
    TransferOwnership,
    decode_event,
    decode_session_state,
    encode_event,
    encode_session_state,
    make_event,
)
from sara.interpreters import (
    CANONICAL_CONVENTION,
    convert_node,
    convert_property_value,
    convert_status,
    convert_vector,
    default_gesture_table,
    load_gesture_table,
    normalize_interaction,
)
from sara.scene import AlignmentInfo, Session, SessionStatus
from sara.server.transports import MqttTransport, TcpListener, UdpListener, WsListener
from sara.snapshot import load_all_snapshots, save_snapshot
from sara.users import UsersService

log = logging.getLogger("sara.server")


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    tcp_port: int = 0
    ws_port: int = 0
    udp_port: int = 0
    mqtt_url: str | None = None
    snapshot_dir: str | None = None
    users_db: str | None = None
    session_config: dict = field(default_factory=dict)
    conflict_window_ms: int = DEFAULT_WINDOW_MS
    conflict_strategy: str = ResolutionStrategy.LAST_WRITER_WINS.value
    auto_create_sessions: bool = True
    require_auth: bool = False
    gesture_table_path: str | None = None
    snapshot_interval_s: float = 30.0


@dataclass
class ClientConnection:
    """One registered peer; identity fixed at the first event."""

    client_id: str
    user_id: str
    handle: object
    connection_method: ConnectionMethod
    convention: Convention
    device_profile: DeviceProfile
    reception_format: StateFormat = StateFormat.CUSTOM_JSON
    joined_session: str | None = None


def _reason_slug(exc: Exception) -> str:
    name = type(exc).__name__
    out = []
    for i, ch in enumerate(name):
        if ch.isupper() and i:
            out.append("-")
        out.append(ch.lower())
    return "".join(out)


def _salvage_event_id(data: bytes) -> str:
    """Best-effort id recovery from a frame the codec refused."""
    try:
        event_id = json.loads(data.decode("utf-8")).get("event_id")
    except (ValueError, UnicodeDecodeError, AttributeError):
        return "unparseable"
    if isinstance(event_id, str) and event_id:
        return event_id
    return "unparseable"


def _filtered_status(status: SessionStatus, visible: set[str]) -> SessionStatus:
    """Connected sub-tree restricted to the visible node set."""
    if visible >= status.nodes.keys():
        return status.copy()
    out = SessionStatus(status.root_id)
    src_root = status.root
    dst_root = out.root
    dst_root.name = src_root.name
    dst_root.transform = src_root.transform.copy()
    dst_root.mesh = src_root.mesh.copy() if src_root.mesh else None
    dst_root.attributes = dict(src_root.attributes)
    for nid in status.subtree_ids(status.root_id):
        if nid == status.root_id or nid not in visible:
            continue
        node = status.node(nid).copy()
        node.children = []
        out.attach_node(node.parent_id, node)
    out.revision = status.revision
    return out


class _SessionWorker:
    """Serial queue plus the thread that owns one session's state."""

    def __init__(self, service: "CommunicationService", session: Session,
                 window_ms: int, strategy: ResolutionStrategy):
        self.service = service
        self.session = session
        self.detector = ConflictDetector(window_ms)
        self.window_ms = window_ms
        self.strategy = strategy
        self.broadcast_log: list[str] = []
        self.broadcast_kinds: list[str] = []
        self.queue: queue.SimpleQueue = queue.SimpleQueue()
        self.enqueued = 0
        self.processed = 0
        self.inflight = 0
        self.counter_lock = threading.Lock()
        self.thread = threading.Thread(target=self._run, daemon=True,
                                       name=f"session-{session.session_id}")
        self.thread.start()

    @property
    def composite(self) -> CompositeModel:
        return self.session.model_config

    def log_broadcast(self, env) -> None:
        self.broadcast_log.append(env.event_id)
        self.broadcast_kinds.append(env.payload.TYPE)

    def submit(self, kind: str, conn=None, env=None) -> None:
        with self.counter_lock:
            self.enqueued += 1
        self.queue.put((kind, conn, env))

    def backlog(self) -> int:
        with self.counter_lock:
            return self.enqueued - self.processed

    def _run(self) -> None:
        while True:
            kind, conn, env = self.queue.get()
            if kind == "stop":
                with self.counter_lock:
                    self.processed += 1
                return
            self.inflight += 1
            try:
                assert self.inflight == 1, "single writer per session violated"
                if kind == "event":
                    self.service._pipeline(self, conn, env)
                elif kind == "join":
                    self.service._handle_join(self, conn, env)
                elif kind == "leave":
                    self.service._handle_leave(self, conn)
                elif kind == "snapshot":
                    self.service._snapshot_one(self)
            except Exception:
                log.exception("pipeline failure in session %s",
                              self.session.session_id)
            finally:
                self.inflight -= 1
                with self.counter_lock:
                    self.processed += 1


class CommunicationService:
    """The one process every client talks to."""

    def __init__(self, config: ServerConfig | None = None,
                 clock: Clock | None = None):
        self.config = config or ServerConfig()
        self.clock = clock or SystemClock()
        self.users: UsersService | None = None
        self._gestures: dict = {}
        self._workers: dict[str, _SessionWorker] = {}
        self._workers_lock = threading.Lock()
        self._conns: dict[object, ClientConnection] = {}
        self._reg_lock = threading.Lock()
        self._mqtt_users: dict[str, object] = {}
        self._tcp = self._ws = self._udp = self._mqtt = None
        self._stopping = threading.Event()
        self._snapshot_thread: threading.Thread | None = None
        self._started = False

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def start(self) -> "CommunicationService":
        cfg = self.config
        self._gestures = (load_gesture_table(cfg.gesture_table_path)
                          if cfg.gesture_table_path else default_gesture_table())
        self.users = UsersService(cfg.users_db)
        if cfg.snapshot_dir:
            for session, window_ms, strategy in load_all_snapshots(cfg.snapshot_dir):
                self._workers[session.session_id] = _SessionWorker(
                    self, session, window_ms, strategy)
        self._tcp = TcpListener(cfg.host, cfg.tcp_port,
                                self._on_frame, self._on_transport_close)
        self._ws = WsListener(cfg.host, cfg.ws_port,
                              self._on_frame, self._on_transport_close,
                              self.health_text)
        self._udp = UdpListener(cfg.host, cfg.udp_port,
                                self._on_frame, self._on_transport_close)
        if cfg.mqtt_url:
            self._mqtt = MqttTransport(cfg.mqtt_url, self._on_mqtt_frame)
        if cfg.snapshot_dir and cfg.snapshot_interval_s > 0:
            self._snapshot_thread = threading.Thread(
                target=self._snapshot_loop, daemon=True, name="snapshots")
            self._snapshot_thread.start()
        self._started = True
        return self

    def stop(self) -> None:
        """Snapshot everything, then tear the listeners down."""
        if not self._started:
            return
        self._started = False
        self._stopping.set()
        workers = list(self._workers.values())
        for worker in workers:
            worker.submit("snapshot")
            worker.submit("stop")
        for worker in workers:
            worker.thread.join(timeout=10)
        for transport in (self._tcp, self._ws, self._udp, self._mqtt):
            if transport is not None:
                transport.close()

    @property
    def tcp_port(self) -> int:
        return self._tcp.port

    @property
    def ws_port(self) -> int:
        return self._ws.port

    @property
    def udp_port(self) -> int:
        return self._udp.port

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    def health_text(self) -> str:
        names = ["tcp", "websocket", "udp"] + (["mqtt"] if self._mqtt else [])
        with self._workers_lock:
            workers = dict(self._workers)
        lines = ["ok",
                 "transports: " + ",".join(names),
                 f"sessions: {len(workers)}"]
        for sid in sorted(workers):
            worker = workers[sid]
            members = len({c.user_id for c in self._members(sid)})
            lines.append(f"session {sid} revision={worker.session.status.revision}"
                         f" members={members}")
        return "\n".join(lines) + "\n"

    def broadcast_order(self, session_id: str) -> list[str]:
        worker = self._workers.get(session_id)
        return list(worker.broadcast_log) if worker else []

    def members(self, session_id: str) -> list[str]:
        """User ids currently joined to the session, sorted."""
        return sorted({c.user_id for c in self._members(session_id)})

    def broadcast_kinds(self, session_id: str) -> list[str]:
        """Event type of each accepted broadcast, in acceptance order."""
        worker = self._workers.get(session_id)
        return list(worker.broadcast_kinds) if worker else []

    def session(self, session_id: str) -> Session | None:
        worker = self._workers.get(session_id)
        return worker.session if worker else None

    def session_ids(self) -> list[str]:
        with self._workers_lock:
            return sorted(self._workers)

    def backlog(self) -> int:
        """Queued-but-unprocessed events plus undrained outbound frames."""
        total = 0
        with self._workers_lock:
            workers = list(self._workers.values())
        for worker in workers:
            total += worker.backlog()
        with self._reg_lock:
            conns = list(self._conns.values())
        for conn in conns:
            if conn.handle.alive:
                total += conn.handle.pending()
        return total

    # ------------------------------------------------------------------
    # inbound frames
    # ------------------------------------------------------------------

    def _on_frame(self, handle, data: bytes) -> None:
        with self._reg_lock:
            conn = self._conns.get(handle)
        try:
            env = decode_event(data)
        except SaraError as exc:
            if conn is not None:
                self._send_to(handle, self._rejection_env(
                    _salvage_event_id(data), f"{_reason_slug(exc)}: {exc}",
                    conn.joined_session or ""))
            else:
                handle.close()
            return
        self._on_envelope(handle, env)

    def _on_mqtt_frame(self, _handle, data: bytes) -> None:
        try:
            env = decode_event(data)
        except SaraError:
            return  # no reply channel for an unidentifiable peer
        payload = env.payload
        if isinstance(payload, NewUserConnection):
            if not payload.client_id:
                return  # inbox routing needs a client-chosen id
            handle = self._mqtt.handle_for(payload.client_id)
        else:
            with self._reg_lock:
                handle = self._mqtt_users.get(env.sender_id)
            if handle is None:
                return
        self._on_envelope(handle, env)

    def _on_envelope(self, handle, env: EventEnvelope) -> None:
        with self._reg_lock:
            conn = self._conns.get(handle)
        if conn is None:
            self._register(handle, env)
            return
        if isinstance(env.payload, NewUserConnection):
            self._send_to(handle, make_event(
                SYSTEM_SENDER, "", Ack(client_id=conn.client_id),
                ts=self.clock.now_ms()))
            return
        # receipt: stamp the server time and pin the sender to the
        # registered identity so nobody can speak for anyone else
        env = EventEnvelope(event_id=env.event_id, sender_id=conn.user_id,
                            session_id=env.session_id,
                            ts=self.clock.now_ms(), payload=env.payload)
        if isinstance(env.payload, ConnectToSession):
            self._route_join(conn, env)
            return
        sid = conn.joined_session
        if sid is None:
            self._send_to(handle, self._rejection_env(
                env.event_id, "not-in-session: connect to a session first", ""))
            return
        worker = self._workers.get(sid)
        if worker is None:
            self._send_to(handle, self._rejection_env(
                env.event_id, f"unknown-session: {sid}", ""))
            return
        env = EventEnvelope(event_id=env.event_id, sender_id=env.sender_id,
                            session_id=sid, ts=env.ts, payload=env.payload)
        worker.submit("event", conn, env)

    # ------------------------------------------------------------------
    # registration and membership
    # ------------------------------------------------------------------

    def _register(self, handle, env: EventEnvelope) -> None:
        payload = env.payload

        def refuse(reason: str) -> None:
            self._send_to(handle, self._rejection_env(env.event_id, reason, ""))
            handle.close()

        if not isinstance(payload, NewUserConnection):
            refuse("protocol-violation: the first event must introduce the user")
            return
        if payload.connection_method != handle.kind:
            refuse("protocol-violation: connection_method does not match the"
                   " transport that delivered it")
            return
        if not payload.user_id or payload.user_id == SYSTEM_SENDER:
            refuse("protocol-violation: reserved or empty user id")
            return
        if self.config.require_auth:
            try:
                self.users.login(payload.user_id, payload.auth_token or "")
            except (UnknownUser, BadToken) as exc:
                refuse(f"{_reason_slug(exc)}: {exc}")
                return
        else:
            self.users.ensure_user(payload.user_id)
        client_id = payload.client_id or uuid.uuid4().hex
        conn = ClientConnection(
            client_id=client_id,
            user_id=payload.user_id,
            handle=handle,
            connection_method=handle.kind,
            convention=payload.convention,
            device_profile=payload.device_profile,
        )
        handle.on_dead = self._on_transport_close
        with self._reg_lock:
            self._conns[handle] = conn
            if handle.kind == ConnectionMethod.MQTT:
                self._mqtt_users[conn.user_id] = handle
        self._send_to(handle, make_event(
            SYSTEM_SENDER, "", Ack(client_id=client_id), ts=self.clock.now_ms()))

    def _route_join(self, conn: ClientConnection, env: EventEnvelope) -> None:
        sid = env.payload.session_id
        if conn.joined_session and conn.joined_session != sid:
            self._send_to(conn.handle, self._rejection_env(
                env.event_id,
                "protocol-violation: already in a session; reconnect to switch",
                conn.joined_session))
            return
        try:
            worker = self._worker_for(sid)
        except ConfigError as exc:
            self._send_to(conn.handle, self._rejection_env(
                env.event_id, f"config-error: {exc}", ""))
            return
        if worker is None:
            self._send_to(conn.handle, self._rejection_env(
                env.event_id, f"unknown-session: {sid}", ""))
            return
        env = EventEnvelope(event_id=env.event_id, sender_id=env.sender_id,
                            session_id=sid, ts=env.ts, payload=env.payload)
        worker.submit("join", conn, env)

    def _worker_for(self, session_id: str) -> _SessionWorker | None:
        with self._workers_lock:
            worker = self._workers.get(session_id)
            if worker is None:
                if not self.config.auto_create_sessions:
                    return None
                worker = self._create_worker(session_id)
                self._workers[session_id] = worker
            return worker

    def _template_for(self, session_id: str) -> dict:
        cfg = self.config.session_config or {}
        base = {k: v for k, v in cfg.items() if k != "sessions"}
        override = (cfg.get("sessions") or {}).get(session_id, {})
        merged = dict(base)
        merged.update(override if isinstance(override, dict) else {})
        return merged

    def _create_worker(self, session_id: str) -> _SessionWorker:
        template = self._template_for(session_id)
        composite = CompositeModel.from_doc(
            {"models": template.get("models", [])})
        alignment = AlignmentInfo()
        align_doc = template.get("alignment")
        if isinstance(align_doc, dict):
            alignment = AlignmentInfo(
                kind=align_doc.get("kind", "none"),
                marker_id=align_doc.get("marker_id", ""),
                physical_width_m=float(align_doc.get("physical_width_m", 0.0)),
                slam_blob=align_doc.get("slam_blob", ""))
            problems = alignment.violations()
            if problems:
                raise ConfigError("; ".join(problems))
        session = Session(session_id=session_id, status=SessionStatus(),
                          alignment=alignment, model_config=composite)
        window_ms = int(template.get("conflict_window_ms",
                                     self.config.conflict_window_ms))
        strategy = ResolutionStrategy.parse(
            template.get("conflict_strategy", self.config.conflict_strategy))
        return _SessionWorker(self, session, window_ms, strategy)

    def _handle_join(self, worker: _SessionWorker, conn: ClientConnection,
                     env: EventEnvelope) -> None:
        sid = worker.session.session_id
        conn.reception_format = env.payload.reception_format
        rejoin = conn.joined_session == sid
        if not rejoin:
            already_member = any(c.user_id == conn.user_id
                                 for c in self._members(sid))
            conn.joined_session = sid
            if not already_member:
                worker.composite.join(conn.user_id)
            worker.log_broadcast(env)
            self._broadcast(worker, env, None)
        self._push_state(worker, conn)

    def _handle_leave(self, worker: _SessionWorker, conn: ClientConnection) -> None:
        sid = worker.session.session_id
        if conn.joined_session != sid:
            return
        conn.joined_session = None
        if not any(c.user_id == conn.user_id for c in self._members(sid)):
            worker.composite.leave(conn.user_id)

    def _on_transport_close(self, handle) -> None:
        with self._reg_lock:
            conn = self._conns.pop(handle, None)
            if conn is not None and handle.kind == ConnectionMethod.MQTT:
                if self._mqtt_users.get(conn.user_id) is handle:
                    del self._mqtt_users[conn.user_id]
        if conn is None or conn.joined_session is None:
            return
        worker = self._workers.get(conn.joined_session)
        if worker is not None:
            worker.submit("leave", conn)

    def _members(self, session_id: str) -> list[ClientConnection]:
        with self._reg_lock:
            return [c for c in self._conns.values()
                    if c.joined_session == session_id]

    # ------------------------------------------------------------------
    # the pipeline (stages 2..7; stage 1 stamped at receipt)
    # ------------------------------------------------------------------

    def _pipeline(self, worker: _SessionWorker, conn: ClientConnection,
                  env: EventEnvelope) -> None:
        composite = worker.composite
        status = worker.session.status
        payload = env.payload

        # normalize device gestures into canonical interaction verbs
        if isinstance(payload, RawInteraction):
            try:
                payload = normalize_interaction(
                    payload, conn.device_profile, CANONICAL_CONVENTION,
                    self._gestures)
            except UnknownGesture as exc:
                self._reject(worker, conn, env, f"unknown-gesture: {exc}")
                return
            env = self._with_payload(env, payload)

        # express payload geometry in the canonical convention
        try:
            env, incoming_state = self._to_canonical(env, conn)
        except SaraError as exc:
            self._reject(worker, conn, env, f"{_reason_slug(exc)}: {exc}")
            return
        payload = env.payload

        # management events: authority check and model mutation in one step
        if env.type in MODEL_EVENT_TYPES:
            pre_visible = self._visible_map(worker)
            verdict = composite.apply_model_event(env)
            if not verdict.accepted:
                self._reject(worker, conn, env, verdict.reason)
                return
            worker.log_broadcast(env)
            self._broadcast(worker, env, pre_visible)
            self._refresh_changed_views(worker, pre_visible)
            return

        # rule validation
        verdict = composite.validate(env, status)
        if not verdict.accepted:
            self._reject(worker, conn, env, verdict.reason)
            return

        # concurrent-update arbitration
        if isinstance(payload, IncrementalUpdate):
            worker.detector.prune(env.ts)
            conflict = worker.detector.detect(env)
            if conflict is not None:
                try:
                    resolution = resolve(conflict, worker.strategy, composite)
                except MergeShapeMismatch:
                    resolution = resolve(conflict,
                                         ResolutionStrategy.LAST_WRITER_WINS,
                                         composite)
                if resolution.rejected is not None:
                    self._reject(worker, conn, env, resolution.reason)
                    return
                env = resolution.apply_events[0]
                payload = env.payload

        # apply to the authoritative state
        pre_visible = None
        removed_ids: tuple = ()
        if isinstance(payload, IncrementalUpdate):
            try:
                status.apply_property_update(payload.node_id,
                                             payload.property_path,
                                             payload.new_value)
            except SaraError as exc:
                self._reject(worker, conn, env, f"{_reason_slug(exc)}: {exc}")
                return
            worker.detector.observe(env)
        elif isinstance(payload, AddNode):
            if payload.node.children:
                self._reject(worker, conn, env,
                             "payload-shape-mismatch: a new node cannot"
                             " declare children")
                return
            pre_visible = self._visible_map(worker)
            node = payload.node.copy()
            try:
                status.attach_node(payload.parent_id, node)
            except SaraError as exc:
                self._reject(worker, conn, env, f"{_reason_slug(exc)}: {exc}")
                return
            env = self._with_payload(env, AddNode(payload.parent_id, node))
        elif isinstance(payload, RemoveNode):
            pre_visible = self._visible_map(worker)
            try:
                removed = status.detach_node(payload.node_id)
            except SaraError as exc:
                self._reject(worker, conn, env, f"{_reason_slug(exc)}: {exc}")
                return
            removed_ids = tuple(removed)
        elif isinstance(payload, SetSessionState):
            status.replace_tree(incoming_state)
        # clicks and drags change no tree state; the provider reacts to them

        composite.on_event_applied(env, status, removed_ids)
        worker.log_broadcast(env)
        self._broadcast(worker, env, pre_visible)
        if pre_visible is not None:
            self._reconcile_structural_views(worker, env, pre_visible)

    def _to_canonical(self, env: EventEnvelope, conn: ClientConnection):
        payload = env.payload
        c = conn.convention
        if isinstance(payload, Click) and payload.world_point is not None:
            payload = Click(payload.node_id,
                            convert_vector(payload.world_point, c),
                            payload.tool)
        elif isinstance(payload, Drag):
            payload = Drag(payload.node_id, convert_vector(payload.delta, c))
        elif isinstance(payload, IncrementalUpdate):
            payload = IncrementalUpdate(
                payload.node_id, payload.property_path,
                convert_property_value(payload.property_path,
                                       payload.new_value, c))
        elif isinstance(payload, AddNode):
            payload = AddNode(payload.parent_id, convert_node(payload.node, c))
        elif isinstance(payload, SetSessionState):
            if conn.connection_method == ConnectionMethod.UDP:
                raise UdpPayloadPolicy("session state may not cross UDP")
            incoming = decode_session_state(payload.state_base64, payload.format)
            return self._with_payload(env, payload), convert_status(incoming, c)
        return self._with_payload(env, payload), None

    # ------------------------------------------------------------------
    # outbound
    # ------------------------------------------------------------------

    def _visible_map(self, worker: _SessionWorker) -> dict[str, set[str]]:
        status = worker.session.status
        return {m.user_id: worker.composite.visible_nodes(m.user_id, status)
                for m in self._members(worker.session.session_id)}

    def _broadcast(self, worker: _SessionWorker, env: EventEnvelope,
                   pre_visible: dict[str, set[str]] | None) -> None:
        status = worker.session.status
        composite = worker.composite
        for member in self._members(worker.session.session_id):
            visible = composite.visible_nodes(member.user_id, status)
            if not self._frame_allowed(env, member, visible, pre_visible):
                continue
            out = self._member_view(worker, env, member, visible)
            if out is None:
                continue
            member.handle.send_text(encode_event(out))

    @staticmethod
    def _frame_allowed(env: EventEnvelope, member: ClientConnection,
                       visible: set[str],
                       pre_visible: dict[str, set[str]] | None) -> bool:
        payload = env.payload
        if isinstance(payload, (Click, Drag, IncrementalUpdate)):
            return payload.node_id in visible
        if isinstance(payload, AddNode):
            return payload.node.node_id in visible
        if isinstance(payload, RemoveNode):
            before = (pre_visible or {}).get(member.user_id, visible)
            return payload.node_id in before
        if isinstance(payload, TransferOwnership):
            return payload.node_id in visible
        if isinstance(payload, SetSubordinatePermissions):
            return all(nid in visible for nid in payload.node_ids)
        return True

    def _member_view(self, worker: _SessionWorker, env: EventEnvelope,
                     member: ClientConnection,
                     visible: set[str]) -> EventEnvelope | None:
        payload = env.payload
        c = member.convention
        if isinstance(payload, SetSessionState):
            if member.connection_method == ConnectionMethod.UDP:
                return None
            return self._state_env(worker, member, visible,
                                   event_id=env.event_id,
                                   sender_id=env.sender_id, ts=env.ts)
        if isinstance(payload, Click) and payload.world_point is not None:
            payload = Click(payload.node_id,
                            convert_vector(payload.world_point, c), payload.tool)
        elif isinstance(payload, Drag):
            payload = Drag(payload.node_id, convert_vector(payload.delta, c))
        elif isinstance(payload, IncrementalUpdate):
            payload = IncrementalUpdate(
                payload.node_id, payload.property_path,
                convert_property_value(payload.property_path,
                                       payload.new_value, c))
        elif isinstance(payload, AddNode):
            payload = AddNode(payload.parent_id, convert_node(payload.node, c))
        else:
            return env
        return self._with_payload(env, payload)

    def _state_env(self, worker: _SessionWorker, member: ClientConnection,
                   visible: set[str] | None = None, event_id: str | None = None,
                   sender_id: str = SYSTEM_SENDER,
                   ts: int | None = None) -> EventEnvelope:
        status = worker.session.status
        if visible is None:
            visible = worker.composite.visible_nodes(member.user_id, status)
        filtered = _filtered_status(status, visible)
        converted = convert_status(filtered, member.convention)
        b64 = encode_session_state(converted, member.reception_format)
        return make_event(
            sender_id, worker.session.session_id,
            SetSessionState(format=member.reception_format, state_base64=b64),
            ts=self.clock.now_ms() if ts is None else ts,
            event_id=event_id)

    def _push_state(self, worker: _SessionWorker, conn: ClientConnection) -> None:
        if conn.connection_method == ConnectionMethod.UDP:
            return  # state replacement is barred from datagram transport
        conn.handle.send_text(encode_event(self._state_env(worker, conn)))

    def _refresh_changed_views(self, worker: _SessionWorker,
                               pre_visible: dict[str, set[str]]) -> None:
        status = worker.session.status
        for member in self._members(worker.session.session_id):
            before = pre_visible.get(member.user_id)
            after = worker.composite.visible_nodes(member.user_id, status)
            if before is not None and before != after:
                self._push_state(worker, member)

    def _reconcile_structural_views(self, worker: _SessionWorker,
                                    env: EventEnvelope,
                                    pre_visible: dict[str, set[str]]) -> None:
        """Re-push state where an add or remove moved a member's view
        further than its own broadcast frame could carry it.

        The frame tells a member about one node.  The visible set can
        move by more than that node: an ancestor becomes visible with
        its first visible descendant, goes dark with its last one, and
        model state pruned with a removed subtree can take other nodes
        along.  A mirror patched only by the frame would drift, so any
        member whose set differs from the frame-implied one gets the
        full filtered state again.
        """
        payload = env.payload
        status = worker.session.status
        nodes_now = set(status.nodes)
        for member in self._members(worker.session.session_id):
            before = pre_visible.get(member.user_id)
            if before is None:
                continue
            after = worker.composite.visible_nodes(member.user_id, status)
            if isinstance(payload, AddNode):
                implied = set(before)
                if payload.node.node_id in after:
                    implied.add(payload.node.node_id)
            else:
                implied = before & nodes_now
            if after != implied:
                self._push_state(worker, member)

    def _reject(self, worker: _SessionWorker | None, conn: ClientConnection,
                env: EventEnvelope, reason: str) -> None:
        sid = worker.session.session_id if worker else ""
        self._send_to(conn.handle, self._rejection_env(env.event_id, reason, sid))

    def _rejection_env(self, rejected_event_id: str, reason: str,
                       session_id: str) -> EventEnvelope:
        return make_event(SYSTEM_SENDER, session_id,
                          EventRejected(rejected_event_id=rejected_event_id,
                                        reason=reason),
                          ts=self.clock.now_ms())

    @staticmethod
    def _send_to(handle, env: EventEnvelope) -> None:
        handle.send_text(encode_event(env))

    @staticmethod
    def _with_payload(env: EventEnvelope, payload) -> EventEnvelope:
        return EventEnvelope(event_id=env.event_id, sender_id=env.sender_id,
                             session_id=env.session_id, ts=env.ts,
                             payload=payload)

    # ------------------------------------------------------------------
    # snapshots
    # ------------------------------------------------------------------

    def _snapshot_loop(self) -> None:
        while not self._stopping.wait(self.config.snapshot_interval_s):
            with self._workers_lock:
                workers = list(self._workers.values())
            for worker in workers:
                worker.submit("snapshot")

    def _snapshot_one(self, worker: _SessionWorker) -> None:
        if not self.config.snapshot_dir:
            return
        save_snapshot(worker.session, self.config.snapshot_dir,
                      worker.window_ms, worker.strategy)
