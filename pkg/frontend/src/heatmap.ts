/**
 * Saliency grid to RGBA overlay pixels.
 *
 * Colors follow a fixed perceptual ramp (dark violet through teal to
 * yellow) scaled by the grid's own maximum, with alpha tracking the cell
 * value so empty regions stay transparent.  The caller draws the result
 * onto a canvas scaled up to the image.
 */

const RAMP: Array<[number, number, number]> = [
  [13, 8, 65],
  [84, 39, 143],
  [33, 113, 181],
  [65, 174, 118],
  [254, 227, 45],
];

/** Map a value in [0, 1] onto the ramp with linear interpolation. */
export function rampColor(t: number): [number, number, number] {
  const x = Math.min(Math.max(t, 0), 1) * (RAMP.length - 1);
  const i = Math.min(Math.floor(x), RAMP.length - 2);
  const f = x - i;
  const lo = RAMP[i]!;
  const hi = RAMP[i + 1]!;
  return [
    Math.round(lo[0] + (hi[0] - lo[0]) * f),
    Math.round(lo[1] + (hi[1] - lo[1]) * f),
    Math.round(lo[2] + (hi[2] - lo[2]) * f),
  ];
}

export interface HeatmapPixels {
  width: number;
  height: number;
  data: Uint8ClampedArray<ArrayBuffer>;
}

export function gridToPixels(
  grid: readonly (readonly number[])[],
  opacity = 0.7,
): HeatmapPixels {
  const height = grid.length;
  const width = height > 0 ? grid[0]!.length : 0;
  const data = new Uint8ClampedArray(width * height * 4);
  let max = 0;
  for (const row of grid) for (const v of row) if (v > max) max = v;
  if (max <= 0) return { width, height, data };

  let p = 0;
  for (let r = 0; r < height; r++) {
    const row = grid[r]!;
    for (let c = 0; c < width; c++) {
      const t = row[c]! / max;
      const [red, green, blue] = rampColor(t);
      data[p] = red;
      data[p + 1] = green;
      data[p + 2] = blue;
      data[p + 3] = Math.round(255 * opacity * t);
      p += 4;
    }
  }
  return { width, height, data };
}
