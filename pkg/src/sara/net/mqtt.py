"""Small MQTT 3.1.1 client and a loopback broker for tests and demos.

Covers exactly what the event bus needs: CONNECT/CONNACK, PUBLISH at
QoS 0 and 1 with PUBACK, SUBSCRIBE/SUBACK, UNSUBSCRIBE, PING and
DISCONNECT, plus `+` and trailing `#` topic wildcards.  No persistent
sessions, no retained messages, no redelivery: the broker here rides on
loopback TCP, which does not drop.

The server normally points at an external broker; MiniBroker exists so
tests and single-machine demos need no extra process.
"""

from __future__ import annotations

import socket
import struct
import threading

from sara.errors import BrokerUnreachable, ProtocolViolation

CONNECT = 1
CONNACK = 2
PUBLISH = 3
PUBACK = 4
SUBSCRIBE = 8
SUBACK = 9
UNSUBSCRIBE = 10
UNSUBACK = 11
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14


def _encode_remaining_length(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n > 0:
            byte |= 0x80
        out.append(byte)
        if n == 0:
            return bytes(out)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("mqtt peer closed")
        buf.extend(chunk)
    return bytes(buf)


def _read_packet(sock: socket.socket) -> tuple[int, int, bytes]:
    header = _read_exact(sock, 1)[0]
    length = 0
    shift = 1
    for _ in range(4):
        byte = _read_exact(sock, 1)[0]
        length += (byte & 0x7F) * shift
        if not byte & 0x80:
            break
        shift *= 128
    else:
        raise ProtocolViolation("mqtt remaining length overlong")
    body = _read_exact(sock, length) if length else b""
    return header >> 4, header & 0x0F, body


def _mqtt_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("!H", len(raw)) + raw


def _parse_str(body: bytes, at: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("!H", body, at)
    at += 2
    return body[at:at + n].decode("utf-8"), at + n


def topic_matches(filter_: str, topic: str) -> bool:
    """MQTT filter match with `+` per level and trailing `#`."""
    f_parts = filter_.split("/")
    t_parts = topic.split("/")
    for i, part in enumerate(f_parts):
        if part == "#":
            return i == len(f_parts) - 1
        if i >= len(t_parts):
            return False
        if part != "+" and part != t_parts[i]:
            return False
    return len(f_parts) == len(t_parts)


class MqttClient:
    """Blocking-connect, threaded-receive MQTT client."""

    def __init__(self, host: str, port: int, client_id: str,
                 on_message=None, connect_timeout: float = 5.0):
        self.on_message = on_message
        self._lock = threading.Lock()
        self._packet_id = 0
        self._acks: dict[int, threading.Event] = {}
        self._sub_acks: dict[int, threading.Event] = {}
        self._closed = False
        try:
            self._sock = socket.create_connection((host, port),
                                                  timeout=connect_timeout)
        except OSError as exc:
            raise BrokerUnreachable(f"cannot reach broker {host}:{port}: {exc}") from None
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        var_header = _mqtt_str("MQTT") + bytes([4, 0x02]) + struct.pack("!H", 0)
        payload = _mqtt_str(client_id)
        self._send_packet(CONNECT, 0, var_header + payload)
        ptype, _, body = _read_packet(self._sock)
        if ptype != CONNACK or len(body) < 2 or body[1] != 0:
            self._sock.close()
            raise BrokerUnreachable("broker refused the connection")
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send_packet(self, ptype: int, flags: int, body: bytes) -> None:
        frame = bytes([(ptype << 4) | flags]) + _encode_remaining_length(len(body)) + body
        with self._lock:
            self._sock.sendall(frame)

    def _next_id(self) -> int:
        self._packet_id = self._packet_id % 65535 + 1
        return self._packet_id

    def publish(self, topic: str, payload: bytes, qos: int = 1,
                timeout: float = 5.0) -> None:
        if qos == 0:
            self._send_packet(PUBLISH, 0, _mqtt_str(topic) + payload)
            return
        packet_id = self._next_id()
        done = threading.Event()
        self._acks[packet_id] = done
        body = _mqtt_str(topic) + struct.pack("!H", packet_id) + payload
        self._send_packet(PUBLISH, 0x02, body)
        if not done.wait(timeout):
            self._acks.pop(packet_id, None)
            raise BrokerUnreachable(f"no PUBACK for {topic} within {timeout}s")

    def subscribe(self, topic_filter: str, qos: int = 1,
                  timeout: float = 5.0) -> None:
        packet_id = self._next_id()
        done = threading.Event()
        self._sub_acks[packet_id] = done
        body = struct.pack("!H", packet_id) + _mqtt_str(topic_filter) + bytes([qos])
        self._send_packet(SUBSCRIBE, 0x02, body)
        if not done.wait(timeout):
            self._sub_acks.pop(packet_id, None)
            raise BrokerUnreachable(f"no SUBACK for {topic_filter}")

    def unsubscribe(self, topic_filter: str) -> None:
        packet_id = self._next_id()
        body = struct.pack("!H", packet_id) + _mqtt_str(topic_filter)
        self._send_packet(UNSUBSCRIBE, 0x02, body)

    def ping(self) -> None:
        self._send_packet(PINGREQ, 0, b"")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._send_packet(DISCONNECT, 0, b"")
        except OSError:
            pass
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def _read_loop(self) -> None:
        try:
            while True:
                ptype, flags, body = _read_packet(self._sock)
                if ptype == PUBLISH:
                    qos = (flags >> 1) & 0x03
                    topic, at = _parse_str(body, 0)
                    if qos:
                        (packet_id,) = struct.unpack_from("!H", body, at)
                        at += 2
                        self._send_packet(PUBACK, 0, struct.pack("!H", packet_id))
                    payload = body[at:]
                    if self.on_message is not None:
                        self.on_message(topic, payload)
                elif ptype == PUBACK:
                    (packet_id,) = struct.unpack("!H", body[:2])
                    done = self._acks.pop(packet_id, None)
                    if done:
                        done.set()
                elif ptype == SUBACK:
                    (packet_id,) = struct.unpack("!H", body[:2])
                    done = self._sub_acks.pop(packet_id, None)
                    if done:
                        done.set()
                elif ptype == PINGRESP or ptype == UNSUBACK:
                    pass
                elif ptype == DISCONNECT:
                    return
        except (ConnectionError, OSError, ProtocolViolation):
            return


class MiniBroker:
    """In-process broker: enough MQTT for one machine's worth of clients."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(32)
        self.host, self.port = self._server.getsockname()
        self._lock = threading.Lock()
        # socket -> (send-lock, list of subscribed filters)
        self._clients: dict[socket.socket, tuple[threading.Lock, list[str]]] = {}
        self._running = True
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            ptype, _, _ = _read_packet(conn)
            if ptype != CONNECT:
                conn.close()
                return
            send_lock = threading.Lock()
            with self._lock:
                self._clients[conn] = (send_lock, [])
            with send_lock:
                conn.sendall(bytes([CONNACK << 4, 2, 0, 0]))
            while True:
                ptype, flags, body = _read_packet(conn)
                if ptype == PUBLISH:
                    self._handle_publish(conn, flags, body)
                elif ptype == SUBSCRIBE:
                    self._handle_subscribe(conn, body)
                elif ptype == UNSUBSCRIBE:
                    self._handle_unsubscribe(conn, body)
                elif ptype == PINGREQ:
                    with self._client_lock(conn):
                        conn.sendall(bytes([PINGRESP << 4, 0]))
                elif ptype == PUBACK:
                    pass
                elif ptype == DISCONNECT:
                    break
        except (ConnectionError, OSError, ProtocolViolation, struct.error):
            pass
        finally:
            with self._lock:
                self._clients.pop(conn, None)
            conn.close()

    def _client_lock(self, conn: socket.socket) -> threading.Lock:
        with self._lock:
            entry = self._clients.get(conn)
        return entry[0] if entry else threading.Lock()

    def _handle_publish(self, conn: socket.socket, flags: int, body: bytes) -> None:
        qos = (flags >> 1) & 0x03
        topic, at = _parse_str(body, 0)
        if qos:
            (packet_id,) = struct.unpack_from("!H", body, at)
            at += 2
            with self._client_lock(conn):
                conn.sendall(bytes([PUBACK << 4, 2]) + struct.pack("!H", packet_id))
        payload = body[at:]
        with self._lock:
            targets = [(c, lock) for c, (lock, filters) in self._clients.items()
                       if any(topic_matches(f, topic) for f in filters)]
        frame_body = _mqtt_str(topic) + payload
        frame = bytes([PUBLISH << 4]) + _encode_remaining_length(len(frame_body)) + frame_body
        for target, lock in targets:
            try:
                with lock:
                    target.sendall(frame)
            except OSError:
                pass

    def _handle_subscribe(self, conn: socket.socket, body: bytes) -> None:
        (packet_id,) = struct.unpack_from("!H", body, 0)
        at = 2
        granted = bytearray()
        filters = []
        while at < len(body):
            topic_filter, at = _parse_str(body, at)
            at += 1  # requested qos; granted below
            filters.append(topic_filter)
            granted.append(1)
        with self._lock:
            entry = self._clients.get(conn)
            if entry:
                entry[1].extend(filters)
        ack = struct.pack("!H", packet_id) + bytes(granted)
        with self._client_lock(conn):
            conn.sendall(bytes([SUBACK << 4]) + _encode_remaining_length(len(ack)) + ack)

    def _handle_unsubscribe(self, conn: socket.socket, body: bytes) -> None:
        (packet_id,) = struct.unpack_from("!H", body, 0)
        at = 2
        removed = []
        while at < len(body):
            topic_filter, at = _parse_str(body, at)
            removed.append(topic_filter)
        with self._lock:
            entry = self._clients.get(conn)
            if entry:
                entry[1][:] = [f for f in entry[1] if f not in removed]
        with self._client_lock(conn):
            conn.sendall(bytes([UNSUBACK << 4, 2]) + struct.pack("!H", packet_id))

    def close(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for conn in clients:
            try:
                conn.close()
            except OSError:
                pass
