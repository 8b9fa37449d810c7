"""Value-semantics scene graph: sessions, node trees, transforms, meshes.

A session's authoritative state is a single-rooted tree of nodes indexed by
id.  All operations here are pure value mutations with no I/O; the server
serializes access per session, so nothing in this module locks.
"""

from __future__ import annotations

import math
import uuid
from dataclasses import dataclass, field

from sara.errors import (
    CannotDetachRoot,
    DuplicateNodeId,
    UnknownNode,
    UnknownParent,
    UnknownPropertyPath,
    ValueShapeMismatch,
)

ROOT_ID = "root"

# Property paths that an incremental update may address.  Closed grammar:
# anything else is rejected before it reaches the tree.
PROPERTY_PATHS = ("transform.position", "transform.rotation", "transform.scale",
                  "name", "mesh")
ATTRIBUTE_PREFIX = "attributes."

ROTATION_NORM_TOL = 1e-6


def new_node_id() -> str:
    return str(uuid.uuid4())


# --- quaternion / vector helpers (used across modules) ---

def quat_mul(a: list[float], b: list[float]) -> list[float]:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return [
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ]


def quat_conjugate(q: list[float]) -> list[float]:
    return [-q[0], -q[1], -q[2], q[3]]


def quat_norm(q: list[float]) -> float:
    return math.sqrt(sum(c * c for c in q))


def rotate_vector(q: list[float], v: list[float]) -> list[float]:
    """Rotate vector v by unit quaternion q."""
    qx, qy, qz, qw = q
    # t = 2 * cross(q.xyz, v)
    tx = 2.0 * (qy * v[2] - qz * v[1])
    ty = 2.0 * (qz * v[0] - qx * v[2])
    tz = 2.0 * (qx * v[1] - qy * v[0])
    return [
        v[0] + qw * tx + (qy * tz - qz * ty),
        v[1] + qw * ty + (qz * tx - qx * tz),
        v[2] + qw * tz + (qx * ty - qy * tx),
    ]


@dataclass
class Transform:
    """Position (meters), rotation (unit quaternion [x,y,z,w]), scale."""

    position: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    rotation: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])
    scale: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def copy(self) -> "Transform":
        return Transform(list(self.position), list(self.rotation), list(self.scale))

    def violations(self) -> list[str]:
        out = []
        if len(self.position) != 3:
            out.append("position must have 3 components")
        if len(self.rotation) != 4:
            out.append("rotation must have 4 components")
        elif abs(quat_norm(self.rotation) - 1.0) > ROTATION_NORM_TOL:
            out.append("rotation must be a unit quaternion")
        if len(self.scale) != 3:
            out.append("scale must have 3 components")
        elif any(c <= 0 for c in self.scale):
            out.append("scale components must be positive")
        return out


def compose_transforms(outer: Transform, inner: Transform) -> Transform:
    """Compose two transforms (outer applied after inner), TRS convention."""
    scaled = [inner.position[i] * outer.scale[i] for i in range(3)]
    rotated = rotate_vector(outer.rotation, scaled)
    return Transform(
        position=[outer.position[i] + rotated[i] for i in range(3)],
        rotation=quat_mul(outer.rotation, inner.rotation),
        scale=[outer.scale[i] * inner.scale[i] for i in range(3)],
    )


def invert_transform(t: Transform) -> Transform:
    inv_scale = [1.0 / c for c in t.scale]
    inv_rot = quat_conjugate(t.rotation)
    p = rotate_vector(inv_rot, [-c for c in t.position])
    return Transform(
        position=[p[i] * inv_scale[i] for i in range(3)],
        rotation=inv_rot,
        scale=inv_scale,
    )


@dataclass
class Mesh:
    """Triangle mesh: flat vertex/index/normal arrays, triples per entry."""

    vertices: list[float] = field(default_factory=list)
    triangles: list[int] = field(default_factory=list)
    normals: list[float] = field(default_factory=list)

    def copy(self) -> "Mesh":
        return Mesh(list(self.vertices), list(self.triangles), list(self.normals))


def validate_mesh(mesh: Mesh) -> list[str]:
    """Return every violated mesh invariant (empty list means valid)."""
    violations = []
    if len(mesh.vertices) % 3 != 0:
        violations.append("vertices length must be a multiple of 3")
    if len(mesh.triangles) % 3 != 0:
        violations.append("triangles length must be a multiple of 3")
    if len(mesh.normals) != len(mesh.vertices):
        violations.append("normals length must equal vertices length")
    vertex_count = len(mesh.vertices) // 3
    for i, idx in enumerate(mesh.triangles):
        if not isinstance(idx, int) or idx < 0 or idx >= vertex_count:
            violations.append(f"triangle index {idx} at position {i} out of range")
    return violations


@dataclass
class Node:
    """One scene-graph node.  A node without a mesh is a grouping node."""

    node_id: str
    name: str = ""
    parent_id: str | None = None
    children: list[str] = field(default_factory=list)
    transform: Transform = field(default_factory=Transform)
    mesh: Mesh | None = None
    attributes: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "Node":
        return Node(
            node_id=self.node_id,
            name=self.name,
            parent_id=self.parent_id,
            children=list(self.children),
            transform=self.transform.copy(),
            mesh=self.mesh.copy() if self.mesh else None,
            attributes=dict(self.attributes),
        )


@dataclass
class AlignmentInfo:
    """How a session's coordinate origin binds to the physical world.

    kind is one of "marker", "none" or "slam".  The slam blob is carried
    opaquely and never interpreted.
    """

    kind: str = "none"
    marker_id: str = ""
    physical_width_m: float = 0.0
    slam_blob: str = ""

    def violations(self) -> list[str]:
        if self.kind == "marker" and self.physical_width_m <= 0:
            return ["marker alignment requires a positive physical width"]
        if self.kind not in ("marker", "none", "slam"):
            return [f"unknown alignment kind {self.kind!r}"]
        return []


class SessionStatus:
    """Authoritative node tree for one session.

    Keeps the canonical id index alongside the tree and a revision counter
    that increments once per applied mutation.
    """

    def __init__(self, root_id: str = ROOT_ID, revision: int = 0):
        root = Node(node_id=root_id, name=root_id)
        self.root_id = root_id
        self.nodes: dict[str, Node] = {root_id: root}
        self.revision = revision

    @property
    def root(self) -> Node:
        return self.nodes[self.root_id]

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node with id {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self.nodes

    def attach_node(self, parent_id: str, node: Node) -> str:
        """Attach node as the last child of parent; returns the node id."""
        if parent_id not in self.nodes:
            raise UnknownParent(f"no parent with id {parent_id!r}")
        if not node.node_id:
            node.node_id = new_node_id()
        if node.node_id in self.nodes:
            raise DuplicateNodeId(f"node id {node.node_id!r} already present")
        node.parent_id = parent_id
        node.children = list(node.children)
        self.nodes[node.node_id] = node
        self.nodes[parent_id].children.append(node.node_id)
        self.revision += 1
        return node.node_id

    def detach_node(self, node_id: str) -> dict[str, Node]:
        """Remove a node and its whole subtree; returns the detached nodes."""
        if node_id not in self.nodes:
            raise UnknownNode(f"no node with id {node_id!r}")
        if node_id == self.root_id:
            raise CannotDetachRoot("the root node cannot be detached")
        detached: dict[str, Node] = {}
        for nid in self._subtree_ids(node_id):
            detached[nid] = self.nodes.pop(nid)
        parent = self.nodes[detached[node_id].parent_id]
        parent.children.remove(node_id)
        detached[node_id].parent_id = None
        self.revision += 1
        return detached

    def _subtree_ids(self, node_id: str) -> list[str]:
        out = []
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def subtree_ids(self, node_id: str) -> list[str]:
        if node_id not in self.nodes:
            raise UnknownNode(f"no node with id {node_id!r}")
        return self._subtree_ids(node_id)

    def ancestors(self, node_id: str) -> list[str]:
        """Ids from the node's parent up to the root (exclusive of node)."""
        out = []
        current = self.node(node_id).parent_id
        while current is not None:
            out.append(current)
            current = self.nodes[current].parent_id
        return out

    def world_transform(self, node_id: str) -> Transform:
        """Transform composing every ancestor down to the node."""
        chain = [self.node(node_id)]
        while chain[-1].parent_id is not None:
            chain.append(self.nodes[chain[-1].parent_id])
        result = Transform()
        for node in reversed(chain):
            result = compose_transforms(result, node.transform)
        return result

    def apply_property_update(self, node_id: str, property_path: str, new_value) -> None:
        """Set one addressed property; everything else stays untouched."""
        node = self.node(node_id)
        if property_path == "transform.position":
            node.transform.position = _require_vec(property_path, new_value, 3)
        elif property_path == "transform.rotation":
            quat = _require_vec(property_path, new_value, 4)
            if abs(quat_norm(quat) - 1.0) > ROTATION_NORM_TOL:
                raise ValueShapeMismatch(f"{property_path} must be a unit quaternion")
            node.transform.rotation = quat
        elif property_path == "transform.scale":
            scale = _require_vec(property_path, new_value, 3)
            if any(c <= 0 for c in scale):
                raise ValueShapeMismatch(f"{property_path} components must be positive")
            node.transform.scale = scale
        elif property_path == "name":
            if not isinstance(new_value, str):
                raise ValueShapeMismatch("name must be a string")
            node.name = new_value
        elif property_path == "mesh":
            if new_value is None:
                node.mesh = None
            else:
                mesh = _mesh_from_value(new_value)
                problems = validate_mesh(mesh)
                if problems:
                    raise ValueShapeMismatch("invalid mesh: " + "; ".join(problems))
                node.mesh = mesh
        elif property_path.startswith(ATTRIBUTE_PREFIX):
            key = property_path[len(ATTRIBUTE_PREFIX):]
            if not key:
                raise UnknownPropertyPath("attribute key missing in property path")
            if not isinstance(new_value, str):
                raise ValueShapeMismatch(f"attribute {key!r} value must be a string")
            node.attributes[key] = new_value
        else:
            raise UnknownPropertyPath(f"unsupported property path {property_path!r}")
        self.revision += 1

    def replace_tree(self, other: "SessionStatus") -> None:
        """Adopt another status's tree wholesale (one mutation, revision+1)."""
        self.root_id = other.root_id
        self.nodes = {nid: n.copy() for nid, n in other.nodes.items()}
        self.revision += 1

    def verify_tree(self) -> list[str]:
        """Full consistency check: mutual links, single root, index exact."""
        problems = []
        if self.root_id not in self.nodes:
            return ["root id missing from index"]
        if self.root.parent_id is not None:
            problems.append("root must not have a parent")
        reachable = set()
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            if nid in reachable:
                problems.append(f"cycle or duplicate reach at {nid}")
                continue
            reachable.add(nid)
            node = self.nodes.get(nid)
            if node is None:
                problems.append(f"child id {nid} missing from index")
                continue
            for child_id in node.children:
                child = self.nodes.get(child_id)
                if child is None:
                    problems.append(f"child id {child_id} missing from index")
                elif child.parent_id != nid:
                    problems.append(f"node {child_id} parent link mismatch")
                stack.append(child_id)
        for nid, node in self.nodes.items():
            if nid not in reachable:
                problems.append(f"node {nid} unreachable from root")
            if nid != node.node_id:
                problems.append(f"index key {nid} does not match node id {node.node_id}")
            if nid != self.root_id:
                parent = self.nodes.get(node.parent_id or "")
                if parent is None or nid not in parent.children:
                    problems.append(f"node {nid} missing from its parent's children")
        return problems

    def copy(self) -> "SessionStatus":
        dup = SessionStatus(self.root_id, self.revision)
        dup.nodes = {nid: n.copy() for nid, n in self.nodes.items()}
        return dup

    def same_tree(self, other: "SessionStatus") -> bool:
        """Structural equality of the trees, ignoring revision."""
        return self.root_id == other.root_id and self.nodes == other.nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, SessionStatus):
            return NotImplemented
        return self.same_tree(other) and self.revision == other.revision


@dataclass
class Session:
    """A collaboration context: one status tree plus its configuration."""

    session_id: str
    status: SessionStatus
    alignment: AlignmentInfo = field(default_factory=AlignmentInfo)
    model_config: object | None = None  # CompositeModel, owned by collab module


def _require_vec(path: str, value, arity: int) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != arity:
        raise ValueShapeMismatch(f"{path} requires {arity} numeric components")
    out = []
    for c in value:
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise ValueShapeMismatch(f"{path} requires numeric components")
        out.append(float(c))
    return out


def _mesh_from_value(value) -> Mesh:
    if isinstance(value, Mesh):
        return value.copy()
    if not isinstance(value, dict):
        raise ValueShapeMismatch("mesh value must be an object or null")
    try:
        return Mesh(
            vertices=[float(v) for v in value["vertices"]],
            triangles=[int(t) for t in value["triangles"]],
            normals=[float(n) for n in value["normals"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueShapeMismatch(f"malformed mesh value: {exc}") from None
