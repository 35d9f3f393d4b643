// Pure brush rasterizer: converts a pointer path into the exact pixel
// set the server stores.  No DOM, fully deterministic, unit-testable
// headless.

export interface Point {
  x: number;
  y: number;
}

export type Pixel = [number, number];

/**
 * Pixels covered by a disc of the given radius centered on (cx, cy).
 * Radius 1 is the unit brush: exactly the center pixel.
 */
export function brushDisc(cx: number, cy: number, radius: number): Pixel[] {
  const r = Math.max(1, Math.floor(radius));
  const out: Pixel[] = [];
  // radius 1 covers only the center; larger radii use an inclusive
  // euclidean disc of radius r - 0.5 around the center
  const rr = r === 1 ? 0 : (r - 0.5) * (r - 0.5);
  for (let dy = -r + 1; dy <= r - 1; dy++) {
    for (let dx = -r + 1; dx <= r - 1; dx++) {
      if (dx * dx + dy * dy <= rr) out.push([cx + dx, cy + dy]);
    }
  }
  return out;
}

/** Integer points along a segment (Bresenham). */
function linePixels(a: Point, b: Point): Pixel[] {
  let x0 = Math.round(a.x);
  let y0 = Math.round(a.y);
  const x1 = Math.round(b.x);
  const y1 = Math.round(b.y);
  const dx = Math.abs(x1 - x0);
  const dy = -Math.abs(y1 - y0);
  const sx = x0 < x1 ? 1 : -1;
  const sy = y0 < y1 ? 1 : -1;
  let err = dx + dy;
  const out: Pixel[] = [];
  for (;;) {
    out.push([x0, y0]);
    if (x0 === x1 && y0 === y1) break;
    const e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

/**
 * Rasterize a brushed path: the disc swept along the path,
 * deduplicated, clipped to the image bounds.  The result is sorted in
 * raster order so identical paths always produce identical arrays.
 */
export function rasterizeStroke(
  path: Point[],
  radius: number,
  width: number,
  height: number,
): Pixel[] {
  const seen = new Set<number>();
  const centers: Pixel[] =
    path.length === 1
      ? [[Math.round(path[0].x), Math.round(path[0].y)]]
      : path.slice(1).flatMap((p, i) => linePixels(path[i], p));
  for (const [cx, cy] of centers) {
    for (const [x, y] of brushDisc(cx, cy, radius)) {
      if (x >= 0 && x < width && y >= 0 && y < height) {
        seen.add(y * width + x);
      }
    }
  }
  return [...seen]
    .sort((a, b) => a - b)
    .map((i) => [i % width, Math.floor(i / width)]);
}
