"""Voxel-game domain: a cube lattice under a terrain group, plus tool logic.

The world is one node per cube, all children of a single ``terrain`` group
node.  Cube centers sit on integer lattice coordinates with half-extent
0.5, so a click on a face lands at center + 0.5 * face normal and the
dominant axis of (click - center) names the face unambiguously.

Tools, carried in the ``tool`` field of a click:

  shovel          remove the clicked cube
  brush:<block>   recolor the clicked cube (sets attributes.block_type)
  adder           attach one new cube against the clicked face
"""

from __future__ import annotations

from dataclasses import dataclass

from sara.events import AddNode, Click, IncrementalUpdate, RemoveNode
from sara.scene import Mesh, Node, SessionStatus, Transform

TERRAIN_GROUP = "terrain"
SHOVEL = "shovel"
BRUSH = "brush"
ADDER = "adder"

DEFAULT_BLOCK = "grass"
BLOCK_PALETTE = ("grass", "stone", "sand", "water", "wood")

# face name -> outward unit normal on the cube
FACES = {
    "east": (1, 0, 0),
    "west": (-1, 0, 0),
    "north": (0, 1, 0),
    "south": (0, -1, 0),
    "up": (0, 0, 1),
    "down": (0, 0, -1),
}

_CUBE_CORNERS = [
    (-0.5, -0.5, -0.5), (0.5, -0.5, -0.5), (0.5, 0.5, -0.5), (-0.5, 0.5, -0.5),
    (-0.5, -0.5, 0.5), (0.5, -0.5, 0.5), (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5),
]
_CUBE_TRIANGLES = [
    0, 2, 1, 0, 3, 2,  # bottom
    4, 5, 6, 4, 6, 7,  # top
    0, 1, 5, 0, 5, 4,  # south
    2, 3, 7, 2, 7, 6,  # north
    1, 2, 6, 1, 6, 5,  # east
    3, 0, 4, 3, 4, 7,  # west
]
_NORM = 0.5773502691896258  # 1/sqrt(3), corner normal component

UNIT_CUBE = Mesh(
    vertices=[c for corner in _CUBE_CORNERS for c in corner],
    triangles=list(_CUBE_TRIANGLES),
    normals=[(_NORM if c > 0 else -_NORM) for corner in _CUBE_CORNERS
             for c in corner],
)


def cube_id(x: int, y: int, z: int) -> str:
    return f"cube_{x}_{y}_{z}"


def cube_coords(node_id: str) -> tuple[int, int, int] | None:
    """Lattice coordinates encoded in a cube id, None for any other node."""
    parts = node_id.split("_")
    if len(parts) != 4 or parts[0] != "cube":
        return None
    try:
        return (int(parts[1]), int(parts[2]), int(parts[3]))
    except ValueError:
        return None


def face_point(x: int, y: int, z: int, face: str) -> list[float]:
    """World point at the center of one face of the cube at (x, y, z)."""
    nx, ny, nz = FACES[face]
    return [x + 0.5 * nx, y + 0.5 * ny, z + 0.5 * nz]


def dominant_face(point: list[float] | None,
                  coords: tuple[int, int, int]) -> str | None:
    """Face of the cube a world point indicates, by dominant offset axis.

    Returns None when the point is missing or sits on an exact tie, where
    no single face is the honest answer.
    """
    if point is None or len(point) != 3:
        return None
    dx = point[0] - coords[0]
    dy = point[1] - coords[1]
    dz = point[2] - coords[2]
    ax, ay, az = abs(dx), abs(dy), abs(dz)
    best = max(ax, ay, az)
    if best == 0.0 or [ax, ay, az].count(best) > 1:
        return None
    if ax == best:
        return "east" if dx > 0 else "west"
    if ay == best:
        return "north" if dy > 0 else "south"
    return "up" if dz > 0 else "down"


def make_cube(x: int, y: int, z: int, block: str = DEFAULT_BLOCK) -> Node:
    return Node(node_id=cube_id(x, y, z),
                transform=Transform(position=[float(x), float(y), float(z)]),
                mesh=UNIT_CUBE.copy(),
                attributes={"block_type": block})


def starting_landscape(extent: tuple[int, int] = (4, 4),
                       block: str = DEFAULT_BLOCK) -> SessionStatus:
    """Flat floor of extent[0] x extent[1] cubes at z=0 under the group."""
    status = SessionStatus()
    status.attach_node(status.root_id, Node(node_id=TERRAIN_GROUP, name="terrain"))
    for x in range(extent[0]):
        for y in range(extent[1]):
            status.attach_node(TERRAIN_GROUP, make_cube(x, y, 0, block))
    return status


@dataclass
class VoxelAppLogic:
    """Provider-side rules turning accepted clicks into scene edits."""

    palette: tuple[str, ...] = BLOCK_PALETTE
    default_block: str = DEFAULT_BLOCK
    extent: tuple[int, int] = (4, 4)

    def react(self, click: Click, tree: SessionStatus) -> list:
        """Structural/update payloads answering one click, possibly empty."""
        coords = cube_coords(click.node_id)
        if coords is None or not tree.has_node(click.node_id):
            return []
        tool = click.tool or ""
        if tool == SHOVEL:
            return [RemoveNode(node_id=click.node_id)]
        if tool.startswith(BRUSH + ":"):
            block = tool.split(":", 1)[1]
            if block not in self.palette:
                return []
            return [IncrementalUpdate(node_id=click.node_id,
                                      property_path="attributes.block_type",
                                      new_value=block)]
        if tool == ADDER:
            face = dominant_face(click.world_point, coords)
            if face is None:
                return []
            nx, ny, nz = FACES[face]
            tx, ty, tz = coords[0] + nx, coords[1] + ny, coords[2] + nz
            if tree.has_node(cube_id(tx, ty, tz)):
                return []
            return [AddNode(parent_id=TERRAIN_GROUP,
                            node=make_cube(tx, ty, tz, self.default_block))]
        return []


def voxel_apply(logic: VoxelAppLogic, interaction: Click,
                tree: SessionStatus) -> list:
    """Tool reaction to an interaction against the provider's mirror."""
    if not isinstance(interaction, Click):
        return []
    return logic.react(interaction, tree)


def grid_of(tree: SessionStatus) -> dict[tuple[int, int, int], str]:
    """Cube lattice view of a session tree: coords -> block type."""
    out: dict[tuple[int, int, int], str] = {}
    if not tree.has_node(TERRAIN_GROUP):
        return out
    for nid in tree.node(TERRAIN_GROUP).children:
        coords = cube_coords(nid)
        if coords is not None:
            out[coords] = tree.node(nid).attributes.get("block_type", "")
    return out
