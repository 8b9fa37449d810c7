"""Typed event envelopes and the wire/state codecs.

Every event is one single-line UTF-8 JSON object with the fields
event_id, sender_id, session_id, type, ts and payload.  Type tags are
dotted lowercase strings and uniquely determine the payload shape.
Session state travels base64-encoded, either as canonical JSON (the only
import format) or as OBJ text (export only).
"""

from __future__ import annotations

import base64
import binascii
import json
import uuid
from dataclasses import dataclass, field
from enum import Enum

from sara.errors import (
    MalformedJson,
    MalformedState,
    PayloadShapeMismatch,
    UnknownEventType,
    UnsupportedFormat,
)
from sara.scene import (
    Mesh,
    Node,
    SessionStatus,
    Transform,
    rotate_vector,
    validate_mesh,
)

SYSTEM_SENDER = "system"


class ConnectionMethod(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    WEBSOCKET = "WEBSOCKET"
    MQTT = "MQTT"


class Convention(str, Enum):
    RIGHT_HANDED = "RIGHT_HANDED"
    LEFT_HANDED = "LEFT_HANDED"


class DeviceProfile(str, Enum):
    HANDHELD_TOUCH = "HANDHELD_TOUCH"
    HMD_GESTURE = "HMD_GESTURE"
    DESKTOP_POINTER = "DESKTOP_POINTER"


class StateFormat(str, Enum):
    CUSTOM_JSON = "CUSTOM_JSON"
    OBJ = "OBJ"
    COLLADA = "COLLADA"  # declared for completeness, never supported


def canonical_json(obj) -> str:
    """Stable-key-order compact JSON; byte-identical for equal values."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# payload variants
# ---------------------------------------------------------------------------

@dataclass
class RawInteraction:
    """Device-specific gesture before normalization."""

    gesture: str
    node_id: str
    point: list[float] | None = None
    delta: list[float] | None = None
    tool: str | None = None

    TYPE = "interaction.raw"


@dataclass
class Click:
    node_id: str
    world_point: list[float] | None = None
    tool: str | None = None

    TYPE = "interaction.click"


@dataclass
class Drag:
    node_id: str
    delta: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    TYPE = "interaction.drag"


@dataclass
class NewUserConnection:
    user_id: str
    connection_method: ConnectionMethod
    convention: Convention
    device_profile: DeviceProfile
    auth_token: str | None = None
    client_id: str | None = None  # client-chosen identity, required over MQTT

    TYPE = "information.new_user_connection"


@dataclass
class ConnectToSession:
    session_id: str
    user_id: str
    reception_format: StateFormat

    TYPE = "information.connect_to_session"


@dataclass
class SetSessionState:
    format: StateFormat
    state_base64: str

    TYPE = "information.set_session_state"


@dataclass
class IncrementalUpdate:
    node_id: str
    property_path: str
    new_value: object

    TYPE = "information.incremental_update"


@dataclass
class AddNode:
    parent_id: str
    node: Node

    TYPE = "information.add_node"


@dataclass
class RemoveNode:
    node_id: str

    TYPE = "information.remove_node"


@dataclass
class EventRejected:
    rejected_event_id: str
    reason: str

    TYPE = "information.event_rejected"


@dataclass
class Ack:
    client_id: str

    TYPE = "information.ack"


@dataclass
class RequestTurn:
    TYPE = "model.request_turn"


@dataclass
class PassTurn:
    to_user: str | None = None

    TYPE = "model.pass_turn"


@dataclass
class TransferOwnership:
    node_id: str
    to_user: str

    TYPE = "model.transfer_ownership"


@dataclass
class GrantLayerAccess:
    layer_id: str
    user_id: str

    TYPE = "model.grant_layer_access"


@dataclass
class RevokeLayerAccess:
    layer_id: str
    user_id: str

    TYPE = "model.revoke_layer_access"


@dataclass
class SetSubordinatePermissions:
    user_id: str
    node_ids: list[str] = field(default_factory=list)

    TYPE = "model.set_subordinate_permissions"


INTERACTION_TYPES = (RawInteraction.TYPE, Click.TYPE, Drag.TYPE)
MODEL_EVENT_TYPES = (RequestTurn.TYPE, PassTurn.TYPE, TransferOwnership.TYPE,
                     GrantLayerAccess.TYPE, RevokeLayerAccess.TYPE,
                     SetSubordinatePermissions.TYPE)
SERVER_ONLY_TYPES = (EventRejected.TYPE, Ack.TYPE)
# Events that reference nodes; broadcast filtering applies to these.
NODE_ADDRESSED_TYPES = (RawInteraction.TYPE, Click.TYPE, Drag.TYPE,
                        IncrementalUpdate.TYPE, RemoveNode.TYPE)


@dataclass
class EventEnvelope:
    """One routable event: sender, target session, timestamp, payload."""

    event_id: str
    sender_id: str
    session_id: str
    ts: int
    payload: object

    @property
    def type(self) -> str:
        return self.payload.TYPE


def make_event(sender_id: str, session_id: str, payload, ts: int = 0,
               event_id: str | None = None) -> EventEnvelope:
    return EventEnvelope(
        event_id=event_id or str(uuid.uuid4()),
        sender_id=sender_id,
        session_id=session_id,
        ts=ts,
        payload=payload,
    )


# ---------------------------------------------------------------------------
# field helpers: every decode failure names the offending field
# ---------------------------------------------------------------------------

def _req(obj: dict, name: str, kinds, where: str):
    if name not in obj:
        raise PayloadShapeMismatch(f"{where}.{name} is missing")
    value = obj[name]
    if kinds is not None and not isinstance(value, kinds):
        raise PayloadShapeMismatch(f"{where}.{name} has the wrong type")
    if isinstance(value, bool) and kinds is not None and bool not in _tupled(kinds):
        raise PayloadShapeMismatch(f"{where}.{name} has the wrong type")
    return value


def _tupled(kinds):
    return kinds if isinstance(kinds, tuple) else (kinds,)


def _opt(obj: dict, name: str, kinds, where: str):
    if name not in obj or obj[name] is None:
        return None
    return _req(obj, name, kinds, where)


def _nonempty(obj: dict, name: str, where: str) -> str:
    value = _req(obj, name, str, where)
    if not value:
        raise PayloadShapeMismatch(f"{where}.{name} must be non-empty")
    return value


def _vec(obj: dict, name: str, arity: int, where: str) -> list[float]:
    value = _req(obj, name, list, where)
    if len(value) != arity or any(
            isinstance(c, bool) or not isinstance(c, (int, float)) for c in value):
        raise PayloadShapeMismatch(f"{where}.{name} must be a {arity}-vector")
    return [float(c) for c in value]


def _opt_vec(obj: dict, name: str, arity: int, where: str) -> list[float] | None:
    if name not in obj or obj[name] is None:
        return None
    return _vec(obj, name, arity, where)


def _enum(obj: dict, name: str, enum_cls, where: str):
    value = _req(obj, name, str, where)
    try:
        return enum_cls(value)
    except ValueError:
        raise PayloadShapeMismatch(f"{where}.{name} has unknown value {value!r}") from None


# ---------------------------------------------------------------------------
# node <-> json object (canonical form used by state docs and AddNode)
# ---------------------------------------------------------------------------

def transform_to_obj(t: Transform) -> dict:
    return {"position": t.position, "rotation": t.rotation, "scale": t.scale}


def transform_from_obj(obj, where: str = "transform") -> Transform:
    if not isinstance(obj, dict):
        raise PayloadShapeMismatch(f"{where} must be an object")
    return Transform(
        position=_vec(obj, "position", 3, where),
        rotation=_vec(obj, "rotation", 4, where),
        scale=_vec(obj, "scale", 3, where),
    )


def mesh_to_obj(mesh: Mesh | None):
    if mesh is None:
        return None
    return {"vertices": mesh.vertices, "triangles": mesh.triangles,
            "normals": mesh.normals}


def mesh_from_obj(obj, where: str = "mesh") -> Mesh | None:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise PayloadShapeMismatch(f"{where} must be an object or null")
    try:
        mesh = Mesh(
            vertices=[float(v) for v in obj["vertices"]],
            triangles=[int(t) for t in obj["triangles"]],
            normals=[float(n) for n in obj["normals"]],
        )
    except (KeyError, TypeError, ValueError):
        raise PayloadShapeMismatch(f"{where} arrays are malformed") from None
    problems = validate_mesh(mesh)
    if problems:
        raise PayloadShapeMismatch(f"{where} invalid: " + "; ".join(problems))
    return mesh


def node_to_obj(node: Node, status: SessionStatus | None = None) -> dict:
    """Encode a node; with a status, children nest recursively in order."""
    children: list = []
    if status is not None:
        children = [node_to_obj(status.nodes[cid], status) for cid in node.children]
    return {
        "node_id": node.node_id,
        "name": node.name,
        "transform": transform_to_obj(node.transform),
        "mesh": mesh_to_obj(node.mesh),
        "attributes": dict(node.attributes),
        "children": children,
    }


def node_from_obj(obj, where: str = "node") -> Node:
    """Decode a single node; nested children are rejected here."""
    node, children = _node_from_obj_shallow(obj, where)
    if children:
        raise PayloadShapeMismatch(f"{where}.children must be empty for a single node")
    return node


def _node_from_obj_shallow(obj, where: str) -> tuple[Node, list]:
    if not isinstance(obj, dict):
        raise PayloadShapeMismatch(f"{where} must be an object")
    attributes = _req(obj, "attributes", dict, where)
    for key, value in attributes.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise PayloadShapeMismatch(f"{where}.attributes must map strings to strings")
    node = Node(
        node_id=_nonempty(obj, "node_id", where),
        name=_req(obj, "name", str, where),
        transform=transform_from_obj(obj.get("transform"), f"{where}.transform"),
        mesh=mesh_from_obj(obj.get("mesh"), f"{where}.mesh"),
        attributes=dict(attributes),
    )
    children = _req(obj, "children", list, where)
    return node, children


def status_to_obj(status: SessionStatus) -> dict:
    return {"revision": status.revision, "root": node_to_obj(status.root, status)}


def obj_to_status(obj, where: str = "state") -> SessionStatus:
    if not isinstance(obj, dict):
        raise PayloadShapeMismatch(f"{where} must be an object")
    revision = _req(obj, "revision", int, where)
    root_obj = _req(obj, "root", dict, where)
    root, root_children = _node_from_obj_shallow(root_obj, f"{where}.root")
    status = SessionStatus(root_id=root.node_id, revision=revision)
    root.children = []
    status.nodes = {root.node_id: root}
    stack = [(root, root_children)]
    while stack:
        parent, child_objs = stack.pop()
        for child_obj in child_objs:
            child, grandchildren = _node_from_obj_shallow(child_obj, f"{where}.node")
            if child.node_id in status.nodes:
                raise PayloadShapeMismatch(
                    f"{where} contains duplicate node id {child.node_id!r}")
            child.parent_id = parent.node_id
            child.children = []
            parent.children.append(child.node_id)
            status.nodes[child.node_id] = child
            stack.append((child, grandchildren))
    return status


# ---------------------------------------------------------------------------
# payload <-> json object
# ---------------------------------------------------------------------------

def _raw_to_obj(p: RawInteraction) -> dict:
    return {"gesture": p.gesture, "node_id": p.node_id, "point": p.point,
            "delta": p.delta, "tool": p.tool}


def _raw_from_obj(o) -> RawInteraction:
    return RawInteraction(
        gesture=_nonempty(o, "gesture", "payload"),
        node_id=_nonempty(o, "node_id", "payload"),
        point=_opt_vec(o, "point", 3, "payload"),
        delta=_opt_vec(o, "delta", 3, "payload"),
        tool=_opt(o, "tool", str, "payload"),
    )


def _click_to_obj(p: Click) -> dict:
    return {"node_id": p.node_id, "world_point": p.world_point, "tool": p.tool}


def _click_from_obj(o) -> Click:
    return Click(
        node_id=_nonempty(o, "node_id", "payload"),
        world_point=_opt_vec(o, "world_point", 3, "payload"),
        tool=_opt(o, "tool", str, "payload"),
    )


def _drag_to_obj(p: Drag) -> dict:
    return {"node_id": p.node_id, "delta": p.delta}


def _drag_from_obj(o) -> Drag:
    return Drag(node_id=_nonempty(o, "node_id", "payload"),
                delta=_vec(o, "delta", 3, "payload"))


def _nuc_to_obj(p: NewUserConnection) -> dict:
    return {"user_id": p.user_id, "connection_method": p.connection_method.value,
            "convention": p.convention.value, "device_profile": p.device_profile.value,
            "auth_token": p.auth_token, "client_id": p.client_id}


def _nuc_from_obj(o) -> NewUserConnection:
    return NewUserConnection(
        user_id=_nonempty(o, "user_id", "payload"),
        connection_method=_enum(o, "connection_method", ConnectionMethod, "payload"),
        convention=_enum(o, "convention", Convention, "payload"),
        device_profile=_enum(o, "device_profile", DeviceProfile, "payload"),
        auth_token=_opt(o, "auth_token", str, "payload"),
        client_id=_opt(o, "client_id", str, "payload"),
    )


def _cts_to_obj(p: ConnectToSession) -> dict:
    return {"session_id": p.session_id, "user_id": p.user_id,
            "reception_format": p.reception_format.value}


def _cts_from_obj(o) -> ConnectToSession:
    return ConnectToSession(
        session_id=_nonempty(o, "session_id", "payload"),
        user_id=_nonempty(o, "user_id", "payload"),
        reception_format=_enum(o, "reception_format", StateFormat, "payload"),
    )


def _sss_to_obj(p: SetSessionState) -> dict:
    return {"format": p.format.value, "state_base64": p.state_base64}


def _sss_from_obj(o) -> SetSessionState:
    payload = SetSessionState(
        format=_enum(o, "format", StateFormat, "payload"),
        state_base64=_req(o, "state_base64", str, "payload"),
    )
    try:
        base64.b64decode(payload.state_base64.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError):
        raise PayloadShapeMismatch("payload.state_base64 is not valid base64") from None
    return payload


def _iu_to_obj(p: IncrementalUpdate) -> dict:
    return {"node_id": p.node_id, "property_path": p.property_path,
            "new_value": p.new_value}


def _iu_from_obj(o) -> IncrementalUpdate:
    if "new_value" not in o:
        raise PayloadShapeMismatch("payload.new_value is missing")
    return IncrementalUpdate(
        node_id=_nonempty(o, "node_id", "payload"),
        property_path=_nonempty(o, "property_path", "payload"),
        new_value=o["new_value"],
    )


def _an_to_obj(p: AddNode) -> dict:
    return {"parent_id": p.parent_id, "node": node_to_obj(p.node)}


def _an_from_obj(o) -> AddNode:
    return AddNode(parent_id=_nonempty(o, "parent_id", "payload"),
                   node=node_from_obj(_req(o, "node", dict, "payload"), "payload.node"))


def _rn_to_obj(p: RemoveNode) -> dict:
    return {"node_id": p.node_id}


def _rn_from_obj(o) -> RemoveNode:
    return RemoveNode(node_id=_nonempty(o, "node_id", "payload"))


def _rej_to_obj(p: EventRejected) -> dict:
    return {"rejected_event_id": p.rejected_event_id, "reason": p.reason}


def _rej_from_obj(o) -> EventRejected:
    return EventRejected(rejected_event_id=_nonempty(o, "rejected_event_id", "payload"),
                         reason=_req(o, "reason", str, "payload"))


def _ack_to_obj(p: Ack) -> dict:
    return {"client_id": p.client_id}


def _ack_from_obj(o) -> Ack:
    return Ack(client_id=_nonempty(o, "client_id", "payload"))


def _rt_to_obj(p: RequestTurn) -> dict:
    return {}


def _rt_from_obj(o) -> RequestTurn:
    return RequestTurn()


def _pt_to_obj(p: PassTurn) -> dict:
    return {"to_user": p.to_user}


def _pt_from_obj(o) -> PassTurn:
    return PassTurn(to_user=_opt(o, "to_user", str, "payload"))


def _to_to_obj(p: TransferOwnership) -> dict:
    return {"node_id": p.node_id, "to_user": p.to_user}


def _to_from_obj(o) -> TransferOwnership:
    return TransferOwnership(node_id=_nonempty(o, "node_id", "payload"),
                             to_user=_nonempty(o, "to_user", "payload"))


def _gla_to_obj(p: GrantLayerAccess) -> dict:
    return {"layer_id": p.layer_id, "user_id": p.user_id}


def _gla_from_obj(o) -> GrantLayerAccess:
    return GrantLayerAccess(layer_id=_nonempty(o, "layer_id", "payload"),
                            user_id=_nonempty(o, "user_id", "payload"))


def _rla_to_obj(p: RevokeLayerAccess) -> dict:
    return {"layer_id": p.layer_id, "user_id": p.user_id}


def _rla_from_obj(o) -> RevokeLayerAccess:
    return RevokeLayerAccess(layer_id=_nonempty(o, "layer_id", "payload"),
                             user_id=_nonempty(o, "user_id", "payload"))


def _ssp_to_obj(p: SetSubordinatePermissions) -> dict:
    return {"user_id": p.user_id, "node_ids": list(p.node_ids)}


def _ssp_from_obj(o) -> SetSubordinatePermissions:
    node_ids = _req(o, "node_ids", list, "payload")
    if any(not isinstance(n, str) or not n for n in node_ids):
        raise PayloadShapeMismatch("payload.node_ids must be non-empty strings")
    return SetSubordinatePermissions(user_id=_nonempty(o, "user_id", "payload"),
                                     node_ids=list(node_ids))


_CODECS = {
    RawInteraction.TYPE: (RawInteraction, _raw_to_obj, _raw_from_obj),
    Click.TYPE: (Click, _click_to_obj, _click_from_obj),
    Drag.TYPE: (Drag, _drag_to_obj, _drag_from_obj),
    NewUserConnection.TYPE: (NewUserConnection, _nuc_to_obj, _nuc_from_obj),
    ConnectToSession.TYPE: (ConnectToSession, _cts_to_obj, _cts_from_obj),
    SetSessionState.TYPE: (SetSessionState, _sss_to_obj, _sss_from_obj),
    IncrementalUpdate.TYPE: (IncrementalUpdate, _iu_to_obj, _iu_from_obj),
    AddNode.TYPE: (AddNode, _an_to_obj, _an_from_obj),
    RemoveNode.TYPE: (RemoveNode, _rn_to_obj, _rn_from_obj),
    EventRejected.TYPE: (EventRejected, _rej_to_obj, _rej_from_obj),
    Ack.TYPE: (Ack, _ack_to_obj, _ack_from_obj),
    RequestTurn.TYPE: (RequestTurn, _rt_to_obj, _rt_from_obj),
    PassTurn.TYPE: (PassTurn, _pt_to_obj, _pt_from_obj),
    TransferOwnership.TYPE: (TransferOwnership, _to_to_obj, _to_from_obj),
    GrantLayerAccess.TYPE: (GrantLayerAccess, _gla_to_obj, _gla_from_obj),
    RevokeLayerAccess.TYPE: (RevokeLayerAccess, _rla_to_obj, _rla_from_obj),
    SetSubordinatePermissions.TYPE: (SetSubordinatePermissions, _ssp_to_obj, _ssp_from_obj),
}

EVENT_TYPES = tuple(_CODECS)


# ---------------------------------------------------------------------------
# event codec
# ---------------------------------------------------------------------------

def encode_event(envelope: EventEnvelope) -> str:
    """Encode an envelope as one line of canonical JSON."""
    _, to_obj, _ = _CODECS[envelope.type]
    return canonical_json({
        "event_id": envelope.event_id,
        "sender_id": envelope.sender_id,
        "session_id": envelope.session_id,
        "type": envelope.type,
        "ts": envelope.ts,
        "payload": to_obj(envelope.payload),
    })


def decode_event(text: str | bytes) -> EventEnvelope:
    """Inverse of encode_event; never raises anything but typed codec errors."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"event is not valid UTF-8: {exc}") from None
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedJson(f"event is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedJson("event must be a JSON object")
    type_tag = obj.get("type")
    if not isinstance(type_tag, str):
        raise MalformedJson("event.type is missing")
    codec = _CODECS.get(type_tag)
    if codec is None:
        raise UnknownEventType(f"unknown event type {type_tag!r}")
    _, _, from_obj = codec
    payload_obj = obj.get("payload")
    if not isinstance(payload_obj, dict):
        raise PayloadShapeMismatch("payload must be an object")
    ts = obj.get("ts", 0)
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise PayloadShapeMismatch("ts must be an integer")
    for name in ("event_id", "sender_id", "session_id"):
        if not isinstance(obj.get(name), str):
            raise PayloadShapeMismatch(f"{name} must be a string")
    try:
        payload = from_obj(payload_obj)
    except PayloadShapeMismatch:
        raise
    except RecursionError:
        raise PayloadShapeMismatch("payload nests too deeply") from None
    return EventEnvelope(
        event_id=obj["event_id"],
        sender_id=obj["sender_id"],
        session_id=obj["session_id"],
        ts=ts,
        payload=payload,
    )


# ---------------------------------------------------------------------------
# session state codec
# ---------------------------------------------------------------------------

def encode_session_state(status: SessionStatus, fmt: StateFormat) -> str:
    """Base64 state document in the requested format."""
    if fmt == StateFormat.CUSTOM_JSON:
        text = canonical_json(status_to_obj(status))
    elif fmt == StateFormat.OBJ:
        text = export_obj(status)
    else:
        raise UnsupportedFormat(f"state format {fmt.value} is not supported")
    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def decode_session_state(state_base64: str, fmt: StateFormat = StateFormat.CUSTOM_JSON) -> SessionStatus:
    if fmt == StateFormat.OBJ:
        raise UnsupportedFormat("OBJ is export-only")
    if fmt != StateFormat.CUSTOM_JSON:
        raise UnsupportedFormat(f"state format {fmt.value} is not supported")
    try:
        raw = base64.b64decode(state_base64.encode("ascii"), validate=True)
        obj = json.loads(raw.decode("utf-8"))
    except (binascii.Error, UnicodeError, json.JSONDecodeError, RecursionError) as exc:
        raise MalformedState(f"state document is unreadable: {exc}") from None
    try:
        status = obj_to_status(obj)
    except PayloadShapeMismatch as exc:
        raise MalformedState(str(exc)) from None
    except RecursionError:
        raise MalformedState("state document nests too deeply") from None
    problems = status.verify_tree()
    if problems:
        raise MalformedState("inconsistent tree: " + "; ".join(problems))
    return status


def _num(x: float) -> str:
    return format(x, "g")


def export_obj(status: SessionStatus) -> str:
    """OBJ text: one object group per mesh-bearing node, session-space vertices."""
    lines: list[str] = []
    offset = 1  # OBJ indices are 1-based and global
    for nid in status.subtree_ids(status.root_id):
        node = status.nodes[nid]
        if node.mesh is None:
            continue
        world = status.world_transform(nid)
        lines.append(f"o {node.node_id}")
        verts = node.mesh.vertices
        for i in range(0, len(verts), 3):
            local = [verts[i], verts[i + 1], verts[i + 2]]
            scaled = [local[j] * world.scale[j] for j in range(3)]
            rotated = rotate_vector(world.rotation, scaled)
            p = [a + b for a, b in zip(world.position, rotated)]
            lines.append(f"v {_num(p[0])} {_num(p[1])} {_num(p[2])}")
        normals = node.mesh.normals
        for i in range(0, len(normals), 3):
            n = rotate_vector(world.rotation, [normals[i], normals[i + 1], normals[i + 2]])
            lines.append(f"vn {_num(n[0])} {_num(n[1])} {_num(n[2])}")
        tris = node.mesh.triangles
        for i in range(0, len(tris), 3):
            lines.append(f"f {tris[i] + offset} {tris[i + 1] + offset} {tris[i + 2] + offset}")
        offset += len(verts) // 3
    return "\n".join(lines) + ("\n" if lines else "")
