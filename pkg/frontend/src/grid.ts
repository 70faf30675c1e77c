/**
 * Instant what-if scoring against the pooled saliency grid.
 *
 * This mirrors the service's client-scoring reference: boxes are clipped
 * to the frame, their union is decomposed into disjoint elementary
 * rectangles by coordinate compression, and each grid cell contributes
 * its mass times the exactly-covered fraction of its area.  Grid rows and
 * columns follow the same integer edge rule the server pools with, so the
 * only difference from a server rescore is the pooling itself.
 */

import type { ImageSize } from "./types.js";

export interface BoxLike {
  readonly xMin: number;
  readonly yMin: number;
  readonly xMax: number;
  readonly yMax: number;
}

/** Integer cell edges: cell i spans [edges[i], edges[i+1]) pixels. */
export function cellEdges(pixels: number, cells: number): number[] {
  const edges = new Array<number>(cells + 1);
  for (let i = 0; i < cells; i++) edges[i] = Math.floor((pixels * i) / cells);
  edges[cells] = pixels;
  return edges;
}

function overlap1d(edges: number[], lo: number, hi: number): Float64Array {
  const n = edges.length - 1;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const a = Math.max(edges[i]!, lo);
    const b = Math.min(edges[i + 1]!, hi);
    out[i] = b > a ? b - a : 0;
  }
  return out;
}

export function gridBoxScore(
  grid: readonly (readonly number[])[],
  size: ImageSize,
  boxes: readonly BoxLike[],
  percent = true,
): number {
  if (boxes.length === 0) return 0.0;
  const gh = grid.length;
  const gw = gh > 0 ? grid[0]!.length : 0;
  if (gh === 0 || gw === 0) return 0.0;
  const { width: w, height: h } = size;

  // exclusive pixel-space rectangles, clipped to the frame
  const rects: Array<[number, number, number, number]> = [];
  for (const b of boxes) {
    const x0 = Math.max(0, b.xMin);
    const y0 = Math.max(0, b.yMin);
    const x1 = Math.min(w, b.xMax + 1);
    const y1 = Math.min(h, b.yMax + 1);
    if (x0 < x1 && y0 < y1) rects.push([x0, y0, x1, y1]);
  }
  if (rects.length === 0) return 0.0;

  const xs = [...new Set(rects.flatMap((r) => [r[0], r[2]]))].sort((a, b) => a - b);
  const ys = [...new Set(rects.flatMap((r) => [r[1], r[3]]))].sort((a, b) => a - b);

  const rowEdges = cellEdges(h, gh);
  const colEdges = cellEdges(w, gw);

  // disjoint elementary rectangles, so summing per-cell overlap areas
  // yields the exact union area
  const covered = new Float64Array(gh * gw);
  for (let yi = 0; yi < ys.length - 1; yi++) {
    for (let xi = 0; xi < xs.length - 1; xi++) {
      const cx = xs[xi]!;
      const cy = ys[yi]!;
      if (!rects.some((r) => r[0] <= cx && cx < r[2] && r[1] <= cy && cy < r[3])) {
        continue;
      }
      const rowOv = overlap1d(rowEdges, cy, ys[yi + 1]!);
      const colOv = overlap1d(colEdges, cx, xs[xi + 1]!);
      for (let r = 0; r < gh; r++) {
        const rv = rowOv[r]!;
        if (rv === 0) continue;
        const base = r * gw;
        for (let c = 0; c < gw; c++) {
          const cv = colOv[c]!;
          if (cv !== 0) covered[base + c]! += rv * cv;
        }
      }
    }
  }

  let score = 0.0;
  for (let r = 0; r < gh; r++) {
    const rowSize = rowEdges[r + 1]! - rowEdges[r]!;
    if (rowSize === 0) continue;
    const row = grid[r]!;
    const base = r * gw;
    for (let c = 0; c < gw; c++) {
      const area = covered[base + c]!;
      if (area === 0) continue;
      const cellArea = rowSize * (colEdges[c + 1]! - colEdges[c]!);
      if (cellArea > 0) score += row[c]! * (area / cellArea);
    }
  }
  return percent ? score * 100.0 : score;
}

/** Total mass held by the grid; at most 1 by the service contract. */
export function gridTotalMass(grid: readonly (readonly number[])[]): number {
  let total = 0.0;
  for (const row of grid) for (const v of row) total += v;
  return total;
}
