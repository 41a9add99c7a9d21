// Deterministic RGBA framebuffer the renderers draw into. Integer pixel
// writes only, so golden-image tests are byte-stable across platforms; the
// browser side blits the buffer with putImageData.

export interface Raster {
  width: number;
  height: number;
  data: Uint8ClampedArray<ArrayBuffer>;
}

export function makeRaster(width: number, height: number): Raster {
  return { width, height, data: new Uint8ClampedArray(new ArrayBuffer(width * height * 4)) };
}

export function fill(r: Raster, red: number, green: number, blue: number, alpha = 255): void {
  for (let i = 0; i < r.data.length; i += 4) {
    r.data[i] = red;
    r.data[i + 1] = green;
    r.data[i + 2] = blue;
    r.data[i + 3] = alpha;
  }
}

export function putPixel(r: Raster, x: number, y: number, red: number, green: number, blue: number): void {
  if (x < 0 || y < 0 || x >= r.width || y >= r.height) return;
  const i = (y * r.width + x) * 4;
  r.data[i] = red;
  r.data[i + 1] = green;
  r.data[i + 2] = blue;
  r.data[i + 3] = 255;
}

export function fillRect(
  r: Raster, x0: number, y0: number, w: number, h: number,
  red: number, green: number, blue: number,
): void {
  const xEnd = Math.min(r.width, x0 + w);
  const yEnd = Math.min(r.height, y0 + h);
  for (let y = Math.max(0, y0); y < yEnd; y++) {
    for (let x = Math.max(0, x0); x < xEnd; x++) {
      putPixel(r, x, y, red, green, blue);
    }
  }
}

export function dot(r: Raster, cx: number, cy: number, red: number, green: number, blue: number): void {
  fillRect(r, cx - 1, cy - 1, 3, 3, red, green, blue);
}

export function countPixels(r: Raster, red: number, green: number, blue: number): number {
  let n = 0;
  for (let i = 0; i < r.data.length; i += 4) {
    if (r.data[i] === red && r.data[i + 1] === green && r.data[i + 2] === blue) n++;
  }
  return n;
}
