/**
 * Canvas painting for the projected voxel scene.
 *
 * Drawing is a straight walk over the projected cell list in painter
 * order.  All picking logic lives in grid.ts against the same polygons,
 * so what you click is what you see.
 */

import { Face, IsoLayout, ProjectedCell, facePolygons } from "./grid.js";

export const BLOCK_COLORS: Record<string, string> = {
  grass: "#58a445",
  stone: "#8d8d93",
  sand: "#ddc97c",
  water: "#3f7fce",
  wood: "#8a5a33",
};

const UNKNOWN_BLOCK = "#b05fa8";

export function blockColor(block: string): string {
  return BLOCK_COLORS[block] ?? UNKNOWN_BLOCK;
}

function shade(hex: string, factor: number): string {
  const n = parseInt(hex.slice(1), 16);
  const r = Math.round(((n >> 16) & 0xff) * factor);
  const g = Math.round(((n >> 8) & 0xff) * factor);
  const b = Math.round((n & 0xff) * factor);
  return `rgb(${r},${g},${b})`;
}

const FACE_SHADE: Record<Face, number> = { up: 1.0, east: 0.72, north: 0.55 };

/**
 * Paint the cells onto the canvas.  A context can be unavailable (some
 * headless documents stub canvases out); the projection math upstream
 * never depends on whether pixels actually land.
 */
export function drawScene(canvas: HTMLCanvasElement, cells: ProjectedCell[],
                          layout: IsoLayout): void {
  let ctx: CanvasRenderingContext2D | null = null;
  try {
    ctx = canvas.getContext("2d");
  } catch {
    ctx = null;
  }
  if (ctx === null) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (const cell of cells) {
    const base = blockColor(cell.block);
    const polys = facePolygons(cell, layout);
    for (const face of ["north", "east", "up"] as Face[]) {
      const poly = polys[face];
      ctx.beginPath();
      ctx.moveTo(poly[0][0], poly[0][1]);
      for (let i = 1; i < poly.length; i++) ctx.lineTo(poly[i][0], poly[i][1]);
      ctx.closePath();
      ctx.fillStyle = shade(base, FACE_SHADE[face]);
      ctx.fill();
      ctx.strokeStyle = "rgba(0,0,0,0.25)";
      ctx.lineWidth = 1;
      ctx.stroke();
    }
  }
}
