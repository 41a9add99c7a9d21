// Top-down laser scan view: polar rays to cartesian points, fit-to-view
// scaling, meter grid rings. Robot x (forward) points up, y points left.

import { LaserScan } from "./protocol.js";
import { Raster, dot, fill, putPixel } from "./raster.js";

export const SCAN_BG = [16, 20, 24] as const;
export const SCAN_RING = [44, 52, 60] as const;
export const SCAN_POINT = [80, 250, 123] as const;
export const SCAN_ORIGIN = [255, 184, 108] as const;

export interface ScanStats {
  drawn: number;
  skipped: number;
  metersPerPixel: number;
}

export function scanToPoints(scan: LaserScan): { x: number; y: number }[] {
  const points: { x: number; y: number }[] = [];
  for (let i = 0; i < scan.ranges.length; i++) {
    const r = scan.ranges[i];
    if (!isFinite(r) || r < scan.range_min || r > scan.range_max) continue;
    const angle = scan.angle_min + i * scan.angle_increment;
    points.push({ x: r * Math.cos(angle), y: r * Math.sin(angle) });
  }
  return points;
}

export function renderScan(scan: LaserScan, raster: Raster): ScanStats {
  fill(raster, SCAN_BG[0], SCAN_BG[1], SCAN_BG[2]);
  const cx = Math.floor(raster.width / 2);
  const cy = Math.floor(raster.height / 2);
  const maxShown = Math.max(scan.range_max, 0.001);
  const radiusPx = Math.min(raster.width, raster.height) / 2 - 8;
  const scale = radiusPx / maxShown; // px per meter
  const metersPerPixel = 1 / scale;

  // rings at whole meters, one stencil pass
  const halfPixelMeters = metersPerPixel / 2;
  for (let y = 0; y < raster.height; y++) {
    for (let x = 0; x < raster.width; x++) {
      const dx = (x - cx) * metersPerPixel;
      const dy = (y - cy) * metersPerPixel;
      const dist = Math.sqrt(dx * dx + dy * dy);
      const nearest = Math.round(dist);
      if (nearest >= 1 && nearest <= maxShown && Math.abs(dist - nearest) <= halfPixelMeters) {
        putPixel(raster, x, y, SCAN_RING[0], SCAN_RING[1], SCAN_RING[2]);
      }
    }
  }

  const points = scanToPoints(scan);
  let drawn = 0;
  for (const p of points) {
    // forward (x) up, left (y) to the left of the screen
    const px = cx - Math.round(p.y * scale);
    const py = cy - Math.round(p.x * scale);
    dot(raster, px, py, SCAN_POINT[0], SCAN_POINT[1], SCAN_POINT[2]);
    drawn++;
  }
  dot(raster, cx, cy, SCAN_ORIGIN[0], SCAN_ORIGIN[1], SCAN_ORIGIN[2]);
  return { drawn, skipped: scan.ranges.length - drawn, metersPerPixel };
}
