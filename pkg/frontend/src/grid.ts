/**
 * Voxel lattice view and isometric projection.
 *
 * Everything here is a pure function of its inputs.  The projected cell
 * list for a mirror depends only on the mirror's content and the layout
 * numbers, never on arrival order or paint history, which is what makes
 * the render purity check meaningful: equal mirrors project to equal
 * lists.
 *
 * Projection: screen x grows toward +x and shrinks toward +y, screen y
 * grows toward both and shrinks with height.  The camera therefore sees
 * three faces of every cube: up, east (+x) and north (+y).
 */

import { SceneMirror } from "./mirror.js";

export const TERRAIN_GROUP = "terrain";

export type Face = "up" | "east" | "north";

export const FACE_NORMALS: Record<Face, [number, number, number]> = {
  up: [0, 0, 1],
  east: [1, 0, 0],
  north: [0, 1, 0],
};

export interface GridCell {
  nodeId: string;
  x: number;
  y: number;
  z: number;
  block: string;
}

export interface IsoLayout {
  hw: number; // half width of the top diamond, px
  hh: number; // half height of the top diamond, px
  vz: number; // vertical pixels per z step
  ox: number; // screen origin of lattice (0, 0, 0)
  oy: number;
}

export interface ProjectedCell extends GridCell {
  sx: number; // screen position of the cube center
  sy: number;
}

export function cubeId(x: number, y: number, z: number): string {
  return `cube_${x}_${y}_${z}`;
}

export function cubeCoords(nodeId: string): [number, number, number] | null {
  const parts = nodeId.split("_");
  if (parts.length !== 4 || parts[0] !== "cube") return null;
  const coords = parts.slice(1).map(Number);
  if (coords.some((c) => !Number.isInteger(c))) return null;
  return coords as [number, number, number];
}

/**
 * Cube cells under the terrain group, in painter order: back to front
 * by x + y, then bottom to top, with a fixed tiebreak so the list is
 * independent of child insertion order.
 */
export function gridOf(mirror: SceneMirror): GridCell[] {
  const out: GridCell[] = [];
  for (const childId of mirror.childIds(TERRAIN_GROUP)) {
    const coords = cubeCoords(childId);
    if (coords === null) continue;
    const node = mirror.node(childId);
    if (node === undefined) continue;
    out.push({
      nodeId: childId,
      x: coords[0],
      y: coords[1],
      z: coords[2],
      block: node.attributes["block_type"] ?? "",
    });
  }
  out.sort((a, b) =>
    (a.x + a.y) - (b.x + b.y) || a.z - b.z || a.x - b.x || a.y - b.y);
  return out;
}

/** Layout that centers the given cells on a width x height canvas. */
export function layoutFor(cells: GridCell[], width: number, height: number): IsoLayout {
  const hw = 26;
  const hh = 13;
  const vz = 18;
  if (cells.length === 0) {
    return { hw, hh, vz, ox: width / 2, oy: height / 2 };
  }
  let minX = Infinity; let maxX = -Infinity;
  let minY = Infinity; let maxY = -Infinity;
  for (const c of cells) {
    const sx = (c.x - c.y) * hw;
    const sy = (c.x + c.y) * hh - c.z * vz;
    minX = Math.min(minX, sx); maxX = Math.max(maxX, sx);
    minY = Math.min(minY, sy); maxY = Math.max(maxY, sy);
  }
  return {
    hw, hh, vz,
    ox: Math.round(width / 2 - (minX + maxX) / 2),
    oy: Math.round(height / 2 - (minY + maxY) / 2),
  };
}

export function projectCell(cell: GridCell, layout: IsoLayout): ProjectedCell {
  return {
    ...cell,
    sx: layout.ox + (cell.x - cell.y) * layout.hw,
    sy: layout.oy + (cell.x + cell.y) * layout.hh - cell.z * layout.vz,
  };
}

export function projectGrid(cells: GridCell[], layout: IsoLayout): ProjectedCell[] {
  return cells.map((c) => projectCell(c, layout));
}

/** Screen polygons of the three visible faces, each a closed quad. */
export function facePolygons(cell: ProjectedCell, layout: IsoLayout):
    Record<Face, Array<[number, number]>> {
  const { hw, hh, vz } = layout;
  const { sx, sy } = cell;
  const top = sy - vz / 2;
  const bottom = sy + vz / 2;
  return {
    up: [
      [sx, top - hh],
      [sx + hw, top],
      [sx, top + hh],
      [sx - hw, top],
    ],
    east: [
      [sx + hw, top],
      [sx + hw, bottom],
      [sx, bottom + hh],
      [sx, top + hh],
    ],
    north: [
      [sx - hw, top],
      [sx, top + hh],
      [sx, bottom + hh],
      [sx - hw, bottom],
    ],
  };
}

function inPolygon(px: number, py: number, poly: Array<[number, number]>): boolean {
  let inside = false;
  for (let i = 0, j = poly.length - 1; i < poly.length; j = i++) {
    const [xi, yi] = poly[i];
    const [xj, yj] = poly[j];
    const crosses = (yi > py) !== (yj > py)
      && px < ((xj - xi) * (py - yi)) / (yj - yi) + xi;
    if (crosses) inside = !inside;
  }
  return inside;
}

export interface Pick {
  cell: ProjectedCell;
  face: Face;
}

/**
 * Front-most cube under a canvas point.  Cells arrive in painter order,
 * so scanning them backwards finds the cube drawn on top first.
 */
export function pickCell(cells: ProjectedCell[], layout: IsoLayout,
                         px: number, py: number): Pick | null {
  for (let i = cells.length - 1; i >= 0; i--) {
    const polys = facePolygons(cells[i], layout);
    for (const face of ["up", "east", "north"] as Face[]) {
      if (inPolygon(px, py, polys[face])) return { cell: cells[i], face };
    }
  }
  return null;
}

/** World point at the center of the picked face: cube center + half normal. */
export function faceWorldPoint(cell: GridCell, face: Face): [number, number, number] {
  const [nx, ny, nz] = FACE_NORMALS[face];
  return [cell.x + 0.5 * nx, cell.y + 0.5 * ny, cell.z + 0.5 * nz];
}
