import { describe, expect, it } from "vitest";
import { cellEdges, gridBoxScore, gridTotalMass } from "../src/grid.js";
import type { ParityFixture } from "./helpers.js";
import { loadFixture } from "./helpers.js";

const fixture = loadFixture<ParityFixture>("parity.json");
const SIZE = { width: fixture.width, height: fixture.height };

const box = (xMin: number, yMin: number, xMax: number, yMax: number) => ({
  xMin,
  yMin,
  xMax,
  yMax,
});

describe("cell edges", () => {
  it("partition the pixel range", () => {
    const edges = cellEdges(192, 96);
    expect(edges).toHaveLength(97);
    expect(edges[0]).toBe(0);
    expect(edges[96]).toBe(192);
    for (let i = 0; i < 96; i++) expect(edges[i + 1]).toBeGreaterThan(edges[i]!);
  });

  it("match integer division when sizes are uneven", () => {
    expect(cellEdges(10, 3)).toEqual([0, 3, 6, 10]);
  });
});

describe("grid scoring on a uniform toy grid", () => {
  // 2x2 grid over a 4x4 image, one quarter of the mass per cell
  const grid = [
    [0.25, 0.25],
    [0.25, 0.25],
  ];
  const size = { width: 4, height: 4 };

  it("scores a full column as half the mass", () => {
    expect(gridBoxScore(grid, size, [box(0, 0, 1, 3)])).toBeCloseTo(50, 10);
  });

  it("weights partial cell coverage by area", () => {
    // left half of the left column covers half of each left cell
    expect(gridBoxScore(grid, size, [box(0, 0, 0, 3)])).toBeCloseTo(25, 10);
  });

  it("does not double count overlapping boxes", () => {
    const once = gridBoxScore(grid, size, [box(0, 0, 2, 2)]);
    const twice = gridBoxScore(grid, size, [box(0, 0, 2, 2), box(1, 1, 2, 2)]);
    expect(twice).toBeCloseTo(once, 12);
  });
});

describe("grid scoring against server scores", () => {
  it("stays within half a point across all fixture cases", () => {
    let worst = 0;
    for (const c of fixture.cases) {
      const client = gridBoxScore(
        fixture.grid,
        SIZE,
        c.boxes.map((b) => box(b.x_min, b.y_min, b.x_max, b.y_max)),
      );
      worst = Math.max(worst, Math.abs(client - c.server_score));
    }
    expect(fixture.cases).toHaveLength(50);
    expect(worst).toBeLessThanOrEqual(0.5);
  });

  it("scores the full frame as the whole grid mass", () => {
    const full = gridBoxScore(fixture.grid, SIZE, [
      box(0, 0, SIZE.width - 1, SIZE.height - 1),
    ]);
    expect(full).toBeCloseTo(100, 9);
    expect(full).toBeCloseTo(gridTotalMass(fixture.grid) * 100, 12);
  });

  it("scores no boxes as exactly zero", () => {
    expect(gridBoxScore(fixture.grid, SIZE, [])).toBe(0);
  });

  it("clips boxes hanging past the frame", () => {
    const inside = gridBoxScore(fixture.grid, SIZE, [box(200, 150, 255, 191)]);
    const hanging = gridBoxScore(fixture.grid, SIZE, [box(200, 150, 400, 400)]);
    expect(hanging).toBeCloseTo(inside, 12);
  });

  it("ranks a high-mass cell strictly above a low-mass cell", () => {
    let hi = { r: 0, c: 0, v: -1 };
    let lo = { r: 0, c: 0, v: Infinity };
    fixture.grid.forEach((row, r) =>
      row.forEach((v, c) => {
        if (v > hi.v) hi = { r, c, v };
        if (v < lo.v) lo = { r, c, v };
      }),
    );
    const rows = cellEdges(SIZE.height, fixture.grid.length);
    const cols = cellEdges(SIZE.width, fixture.grid[0]!.length);
    const cellBox = (r: number, c: number) =>
      box(cols[c]!, rows[r]!, cols[c + 1]! - 1, rows[r + 1]! - 1);
    const high = gridBoxScore(fixture.grid, SIZE, [cellBox(hi.r, hi.c)]);
    const low = gridBoxScore(fixture.grid, SIZE, [cellBox(lo.r, lo.c)]);
    expect(high).toBeGreaterThan(low);
  });

  it("grows monotonically as a box expands", () => {
    let prev = 0;
    for (let grow = 4; grow <= 96; grow += 8) {
      const score = gridBoxScore(fixture.grid, SIZE, [
        box(128 - grow, 96 - Math.floor(grow * 0.75), 127 + grow, 95 + Math.floor(grow * 0.75)),
      ]);
      expect(score).toBeGreaterThanOrEqual(prev - 1e-12);
      prev = score;
    }
  });
});
