"""Transport listeners: TCP lines, WebSocket frames, UDP datagrams, MQTT topics.

Every listener turns its wire format into `(handle, bytes)` callbacks and
gives each peer a Handle with an ordered outbound queue drained by its own
sender thread.  A slow or dead peer is dropped, never waited on, so one
client can never stall the event pipeline.
"""

from __future__ import annotations

import queue
import socket
import threading
import uuid
from http import HTTPStatus
from urllib.parse import urlparse

from sara.errors import BrokerUnreachable, PortInUse
from sara.events import ConnectionMethod
from sara.net.mqtt import MqttClient

MAX_DATAGRAM = 65507

_CLOSE = object()


class Handle:
    """One reachable peer.  send_text never blocks the caller."""

    kind: ConnectionMethod

    def __init__(self, kind: ConnectionMethod, peer: str, maxsize: int = 1024):
        self.kind = kind
        self.peer = peer
        self.alive = True
        self.on_dead = None  # set by the service; called once, any thread
        self._outbox: queue.Queue = queue.Queue(maxsize)
        self._sender = threading.Thread(target=self._drain, daemon=True,
                                        name=f"send-{peer}")
        self._sender.start()

    def send_text(self, text: str) -> None:
        if not self.alive:
            return
        try:
            self._outbox.put_nowait(text)
        except queue.Full:
            self._die()

    def pending(self) -> int:
        return self._outbox.qsize()

    def close(self) -> None:
        if self.alive:
            self.alive = False
            self._outbox.put(_CLOSE)

    def _drain(self) -> None:
        while True:
            item = self._outbox.get()
            if item is _CLOSE:
                self._close_raw()
                return
            try:
                self._send_raw(item)
            except Exception:
                self._die()
                return

    def _die(self) -> None:
        was_alive = self.alive
        self.close()
        if was_alive and self.on_dead is not None:
            self.on_dead(self)

    def _send_raw(self, text: str) -> None:
        raise NotImplementedError

    def _close_raw(self) -> None:
        pass


def _bind_or_raise(sock: socket.socket, host: str, port: int, label: str) -> None:
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise PortInUse(f"{label} port {port} unavailable: {exc}") from None


class TcpHandle(Handle):
    def __init__(self, conn: socket.socket, peer: str):
        self._sock = conn
        super().__init__(ConnectionMethod.TCP, peer)

    def _send_raw(self, text: str) -> None:
        self._sock.sendall(text.encode("utf-8") + b"\n")

    def _close_raw(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpListener:
    """Newline-delimited JSON over TCP, one event per line."""

    def __init__(self, host: str, port: int, on_frame, on_close):
        self._on_frame = on_frame
        self._on_close = on_close
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        _bind_or_raise(self._server, host, port, "tcp")
        self._server.listen(64)
        self.port = self._server.getsockname()[1]
        self._running = True
        self._handles: set[TcpHandle] = set()
        self._lock = threading.Lock()
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True,
                                          name="tcp-accept")
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, addr = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn, addr),
                             daemon=True, name=f"tcp-{addr}").start()

    def _serve(self, conn: socket.socket, addr) -> None:
        # small frames must not sit out Nagle waiting for delayed ACKs
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        handle = TcpHandle(conn, f"tcp:{addr[0]}:{addr[1]}")
        with self._lock:
            self._handles.add(handle)
        try:
            reader = conn.makefile("rb")
            for raw in reader:
                if not handle.alive:
                    break
                line = raw[:-1] if raw.endswith(b"\n") else raw
                if not line:
                    continue
                self._on_frame(handle, line)
        except (OSError, ValueError):
            pass
        finally:
            with self._lock:
                self._handles.discard(handle)
            handle.close()
            self._on_close(handle)

    def close(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass
        with self._lock:
            handles = list(self._handles)
        for handle in handles:
            handle.close()


class WsHandle(Handle):
    def __init__(self, ws, peer: str):
        self._ws = ws
        super().__init__(ConnectionMethod.WEBSOCKET, peer)

    def _send_raw(self, text: str) -> None:
        self._ws.send(text)

    def _close_raw(self) -> None:
        try:
            self._ws.close()
        except Exception:
            pass


class WsListener:
    """One event per text frame; plain-text GET /health on the same port."""

    def __init__(self, host: str, port: int, on_frame, on_close, health_text):
        from websockets.sync.server import serve

        self._on_frame = on_frame
        self._on_close = on_close
        self._health_text = health_text

        def process_request(connection, request):
            if request.path == "/health":
                return connection.respond(HTTPStatus.OK, self._health_text())
            return None

        try:
            self._server = serve(self._handler, host, port,
                                 process_request=process_request)
        except OSError as exc:
            raise PortInUse(f"websocket port {port} unavailable: {exc}") from None
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True, name="ws-serve")
        self._thread.start()

    def _handler(self, ws) -> None:
        addr = ws.remote_address
        try:
            ws.socket.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        handle = WsHandle(ws, f"ws:{addr[0]}:{addr[1]}")
        try:
            for message in ws:
                if not handle.alive:
                    break
                data = message.encode("utf-8") if isinstance(message, str) else message
                self._on_frame(handle, data)
        except Exception:
            pass
        finally:
            handle.close()
            self._on_close(handle)

    def close(self) -> None:
        self._server.shutdown()


class UdpHandle(Handle):
    def __init__(self, sock: socket.socket, addr):
        self._sock = sock
        self.addr = addr
        super().__init__(ConnectionMethod.UDP, f"udp:{addr[0]}:{addr[1]}")

    def _send_raw(self, text: str) -> None:
        payload = text.encode("utf-8")
        if len(payload) > MAX_DATAGRAM:
            return  # best-effort transport; oversized frames are dropped
        self._sock.sendto(payload, self.addr)


class UdpListener:
    """One event per datagram, best effort, no retransmit."""

    def __init__(self, host: str, port: int, on_frame, on_close):
        self._on_frame = on_frame
        self._on_close = on_close
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        _bind_or_raise(self._sock, host, port, "udp")
        self.port = self._sock.getsockname()[1]
        self._handles: dict[tuple, UdpHandle] = {}
        self._lock = threading.Lock()
        self._running = True
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="udp-read")
        self._reader.start()

    def _read_loop(self) -> None:
        while self._running:
            try:
                data, addr = self._sock.recvfrom(65535)
            except OSError:
                return
            with self._lock:
                handle = self._handles.get(addr)
                if handle is None or not handle.alive:
                    handle = UdpHandle(self._sock, addr)
                    self._handles[addr] = handle
            self._on_frame(handle, data)

    def drop(self, handle: UdpHandle) -> None:
        with self._lock:
            self._handles.pop(handle.addr, None)
        handle.close()

    def close(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            handles = list(self._handles.values())
            self._handles.clear()
        for handle in handles:
            handle.close()


class MqttHandle(Handle):
    def __init__(self, client: MqttClient, client_id: str):
        self._client = client
        self.client_id = client_id
        super().__init__(ConnectionMethod.MQTT, f"mqtt:{client_id}")

    def _send_raw(self, text: str) -> None:
        self._client.publish(f"sara/v1/client/{self.client_id}/inbox",
                             text.encode("utf-8"), qos=1)


class MqttTransport:
    """Bridge to an external broker.

    Inbound events arrive on `sara/v1/session/+/events`; replies go to each
    client's `sara/v1/client/{client_id}/inbox`.  There is no connection to
    close, so peer identity rides on the client_id carried in the first
    event (one bus client per user).
    """

    def __init__(self, url: str, on_frame):
        parsed = urlparse(url)
        if parsed.scheme not in ("mqtt", "tcp") or not parsed.hostname:
            raise BrokerUnreachable(f"cannot parse broker url {url!r}")
        self._on_frame = on_frame
        self._client = MqttClient(parsed.hostname, parsed.port or 1883,
                                  f"sara-server-{uuid.uuid4().hex[:8]}",
                                  on_message=self._on_message)
        self._client.subscribe("sara/v1/session/+/events", qos=1)
        self._handles: dict[str, MqttHandle] = {}
        self._lock = threading.Lock()

    def handle_for(self, client_id: str) -> MqttHandle:
        with self._lock:
            handle = self._handles.get(client_id)
            if handle is None or not handle.alive:
                handle = MqttHandle(self._client, client_id)
                self._handles[client_id] = handle
            return handle

    def _on_message(self, topic: str, payload: bytes) -> None:
        self._on_frame(None, payload)

    def close(self) -> None:
        with self._lock:
            handles = list(self._handles.values())
            self._handles.clear()
        for handle in handles:
            handle.close()
        self._client.close()
