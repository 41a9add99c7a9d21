// Occupancy grid view. Cell values: -1 unknown (map gray), 0 free (white),
// 100 occupied (black), 1..99 linear grayscale. Row 0 renders at the bottom.

import { OccupancyGrid } from "./protocol.js";
import { Raster, fill, fillRect } from "./raster.js";

export const GRID_UNKNOWN = 205;
export const GRID_BG = [16, 20, 24] as const;

export class GridSizeMismatch extends Error {}

export function cellShade(value: number): number {
  if (value === 0) return 255;
  if (value === 100) return 0;
  if (value >= 1 && value <= 99) return Math.round(255 - value * 2.55);
  return GRID_UNKNOWN; // -1 and anything out of range
}

export function renderGrid(grid: OccupancyGrid, raster: Raster): { cellPx: number } {
  const { width, height } = grid.info;
  if (grid.data.length !== width * height) {
    throw new GridSizeMismatch(
      `grid data has ${grid.data.length} cells, expected ${width}x${height}`,
    );
  }
  fill(raster, GRID_BG[0], GRID_BG[1], GRID_BG[2]);
  if (width === 0 || height === 0) return { cellPx: 0 };
  const cellPx = Math.max(1, Math.floor(Math.min(raster.width / width, raster.height / height)));
  const x0 = Math.floor((raster.width - width * cellPx) / 2);
  const y0 = Math.floor((raster.height - height * cellPx) / 2);
  for (let row = 0; row < height; row++) {
    const screenRow = height - 1 - row; // map convention: row 0 at the bottom
    for (let col = 0; col < width; col++) {
      const shade = cellShade(grid.data[row * width + col]);
      fillRect(raster, x0 + col * cellPx, y0 + screenRow * cellPx, cellPx, cellPx, shade, shade, shade);
    }
  }
  return { cellPx };
}

export function gridCaption(grid: OccupancyGrid): string {
  const { width, height, resolution, origin } = grid.info;
  const p = origin.position;
  return `${width}x${height} @ ${resolution} m/cell, origin (${p.x.toFixed(2)}, ${p.y.toFixed(2)})`;
}
