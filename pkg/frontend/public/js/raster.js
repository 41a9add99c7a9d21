// Deterministic RGBA framebuffer the renderers draw into. Integer pixel
// writes only, so golden-image tests are byte-stable across platforms; the
// browser side blits the buffer with putImageData.
export function makeRaster(width, height) {
    return { width, height, data: new Uint8ClampedArray(new ArrayBuffer(width * height * 4)) };
}
export function fill(r, red, green, blue, alpha = 255) {
    for (let i = 0; i < r.data.length; i += 4) {
        r.data[i] = red;
        r.data[i + 1] = green;
        r.data[i + 2] = blue;
        r.data[i + 3] = alpha;
    }
}
export function putPixel(r, x, y, red, green, blue) {
    if (x < 0 || y < 0 || x >= r.width || y >= r.height)
        return;
    const i = (y * r.width + x) * 4;
    r.data[i] = red;
    r.data[i + 1] = green;
    r.data[i + 2] = blue;
    r.data[i + 3] = 255;
}
export function fillRect(r, x0, y0, w, h, red, green, blue) {
    const xEnd = Math.min(r.width, x0 + w);
    const yEnd = Math.min(r.height, y0 + h);
    for (let y = Math.max(0, y0); y < yEnd; y++) {
        for (let x = Math.max(0, x0); x < xEnd; x++) {
            putPixel(r, x, y, red, green, blue);
        }
    }
}
export function dot(r, cx, cy, red, green, blue) {
    fillRect(r, cx - 1, cy - 1, 3, 3, red, green, blue);
}
export function countPixels(r, red, green, blue) {
    let n = 0;
    for (let i = 0; i < r.data.length; i += 4) {
        if (r.data[i] === red && r.data[i + 1] === green && r.data[i + 2] === blue)
            n++;
    }
    return n;
}
