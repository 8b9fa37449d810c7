"""Convention and interaction interpreters.

The server stores everything right-handed.  Left-handed clients differ by
a Z-axis inversion: positions and direction vectors negate z, and a
rotation (x, y, z, w) maps to (-x, -y, z, w).  That map is its own
inverse, so to/from-canonical share one implementation.

Device-specific gestures normalize to clicks and drags through a data
table, so adding a device profile means editing JSON, not code.
"""

from __future__ import annotations

import json
from importlib import resources

from sara.errors import ConfigError, UnknownGesture
from sara.events import Click, Convention, DeviceProfile, Drag, RawInteraction
from sara.scene import Node, SessionStatus, Transform

CANONICAL_CONVENTION = Convention.RIGHT_HANDED


def _negate_z(v: list[float]) -> list[float]:
    z = -v[2]
    if z == 0.0:
        z = 0.0  # keep wire text free of negative zero
    return [v[0], v[1], z]


def convert_vector(v: list[float], c: Convention) -> list[float]:
    """Positions and displacement vectors under a handedness change."""
    if c == Convention.RIGHT_HANDED:
        return list(v)
    return _negate_z(v)


def convert_rotation(q: list[float], c: Convention) -> list[float]:
    if c == Convention.RIGHT_HANDED:
        return list(q)
    x = -q[0] if q[0] != 0.0 else 0.0
    y = -q[1] if q[1] != 0.0 else 0.0
    return [x, y, q[2], q[3]]


def to_canonical_transform(t: Transform, c: Convention) -> Transform:
    if c == Convention.RIGHT_HANDED:
        return t.copy()
    return Transform(
        position=_negate_z(t.position),
        rotation=convert_rotation(t.rotation, c),
        scale=list(t.scale),
    )


def from_canonical_transform(t: Transform, c: Convention) -> Transform:
    # The Z-inversion map is an involution, so the inverse is the map itself.
    return to_canonical_transform(t, c)


def convert_node(node: Node, c: Convention) -> Node:
    """Copy of the node with its transform expressed in the target frame.

    Mesh geometry is carried as-authored; only transforms change frame.
    """
    dup = node.copy()
    dup.transform = to_canonical_transform(node.transform, c)
    return dup


def convert_status(status: SessionStatus, c: Convention) -> SessionStatus:
    if c == Convention.RIGHT_HANDED:
        return status.copy()
    dup = status.copy()
    for node in dup.nodes.values():
        node.transform = to_canonical_transform(node.transform, c)
    return dup


def convert_property_value(property_path: str, value, c: Convention):
    """Frame-convert an incremental-update value where the path needs it."""
    if c == Convention.RIGHT_HANDED:
        return value
    if property_path == "transform.position" and _is_vec(value, 3):
        return _negate_z([float(x) for x in value])
    if property_path == "transform.rotation" and _is_vec(value, 4):
        return convert_rotation([float(x) for x in value], c)
    return value


def _is_vec(value, arity: int) -> bool:
    return (isinstance(value, (list, tuple)) and len(value) == arity
            and all(not isinstance(x, bool) and isinstance(x, (int, float)) for x in value))


# ---------------------------------------------------------------------------
# interaction normalization
# ---------------------------------------------------------------------------

def load_gesture_table(path: str | None = None) -> dict[str, dict[str, str]]:
    """Profile -> gesture -> canonical kind ("click" | "drag")."""
    if path is None:
        text = resources.files("sara").joinpath("data/gestures.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        table = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"gesture table is not valid JSON: {exc}") from None
    if not isinstance(table, dict):
        raise ConfigError("gesture table must be an object")
    for profile, gestures in table.items():
        if not isinstance(gestures, dict):
            raise ConfigError(f"gesture table entry {profile!r} must be an object")
        for gesture, kind in gestures.items():
            if kind not in ("click", "drag"):
                raise ConfigError(
                    f"gesture {profile}.{gesture} maps to unknown kind {kind!r}")
    return table


_DEFAULT_TABLE: dict[str, dict[str, str]] | None = None


def default_gesture_table() -> dict[str, dict[str, str]]:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_gesture_table()
    return _DEFAULT_TABLE


def normalize_interaction(raw: RawInteraction, profile: DeviceProfile,
                          convention: Convention = Convention.RIGHT_HANDED,
                          table: dict[str, dict[str, str]] | None = None):
    """Map a device gesture to a canonical Click or Drag.

    Points and deltas arrive in the sender's convention and leave canonical.
    """
    if table is None:
        table = default_gesture_table()
    gestures = table.get(profile.value, {})
    kind = gestures.get(raw.gesture)
    if kind is None:
        raise UnknownGesture(
            f"gesture {raw.gesture!r} is not defined for profile {profile.value}")
    if kind == "click":
        point = convert_vector(raw.point, convention) if raw.point is not None else None
        return Click(node_id=raw.node_id, world_point=point, tool=raw.tool)
    delta = convert_vector(raw.delta, convention) if raw.delta is not None else [0.0, 0.0, 0.0]
    return Drag(node_id=raw.node_id, delta=delta)
