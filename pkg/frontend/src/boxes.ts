/**
 * Canvas-side bounding boxes.
 *
 * Geometry matches the service: integer pixel coordinates with both the
 * min and max edges inside the box, so a box spanning the full frame of a
 * width-w image has x_min 0 and x_max w-1.  Conversion to and from the
 * wire format is lossless; editing operations return new instances and
 * clamp to the frame instead of throwing.
 */

import type { BoxJson, ImageSize } from "./types.js";

function checkCoord(name: string, value: number): number {
  if (!Number.isInteger(value)) {
    throw new RangeError(`${name} must be an integer, got ${value}`);
  }
  if (value < 0) {
    throw new RangeError(`${name} must be >= 0, got ${value}`);
  }
  return value;
}

const clampInt = (value: number, lo: number, hi: number): number =>
  Math.min(Math.max(Math.round(value), lo), hi);

export class CanvasBox {
  readonly xMin: number;
  readonly yMin: number;
  readonly xMax: number;
  readonly yMax: number;
  readonly label?: string;
  readonly confidence?: number;

  selected = false;
  dragging = false;

  constructor(
    xMin: number,
    yMin: number,
    xMax: number,
    yMax: number,
    label?: string,
    confidence?: number,
  ) {
    this.xMin = checkCoord("x_min", xMin);
    this.yMin = checkCoord("y_min", yMin);
    this.xMax = checkCoord("x_max", xMax);
    this.yMax = checkCoord("y_max", yMax);
    if (xMax < xMin || yMax < yMin) {
      throw new RangeError(
        `box corners out of order: (${xMin},${yMin})..(${xMax},${yMax})`,
      );
    }
    if (confidence !== undefined && (confidence < 0 || confidence > 1)) {
      throw new RangeError(`confidence must be in [0, 1], got ${confidence}`);
    }
    this.label = label;
    this.confidence = confidence;
  }

  static fromJson(raw: BoxJson): CanvasBox {
    return new CanvasBox(
      raw.x_min,
      raw.y_min,
      raw.x_max,
      raw.y_max,
      raw.label,
      raw.confidence,
    );
  }

  toJson(): BoxJson {
    const out: BoxJson = {
      x_min: this.xMin,
      y_min: this.yMin,
      x_max: this.xMax,
      y_max: this.yMax,
    };
    if (this.label !== undefined) out.label = this.label;
    if (this.confidence !== undefined) out.confidence = this.confidence;
    return out;
  }

  get width(): number {
    return this.xMax - this.xMin + 1;
  }

  get height(): number {
    return this.yMax - this.yMin + 1;
  }

  fitsIn(size: ImageSize): boolean {
    return this.xMax <= size.width - 1 && this.yMax <= size.height - 1;
  }

  containsPoint(x: number, y: number): boolean {
    return x >= this.xMin && x <= this.xMax && y >= this.yMin && y <= this.yMax;
  }

  private carryState(box: CanvasBox): CanvasBox {
    box.selected = this.selected;
    box.dragging = this.dragging;
    return box;
  }

  /** Translate by (dx, dy), sliding back as needed to stay inside the frame. */
  movedBy(dx: number, dy: number, size: ImageSize): CanvasBox {
    const x = clampInt(this.xMin + dx, 0, size.width - this.width);
    const y = clampInt(this.yMin + dy, 0, size.height - this.height);
    return this.carryState(
      new CanvasBox(
        x,
        y,
        x + this.width - 1,
        y + this.height - 1,
        this.label,
        this.confidence,
      ),
    );
  }

  /**
   * Replace any subset of the four edges, clamping each to the frame and
   * swapping a crossed pair so the result is always a valid box.
   */
  resizedTo(
    edges: { xMin?: number; yMin?: number; xMax?: number; yMax?: number },
    size: ImageSize,
  ): CanvasBox {
    let x0 = clampInt(edges.xMin ?? this.xMin, 0, size.width - 1);
    let x1 = clampInt(edges.xMax ?? this.xMax, 0, size.width - 1);
    let y0 = clampInt(edges.yMin ?? this.yMin, 0, size.height - 1);
    let y1 = clampInt(edges.yMax ?? this.yMax, 0, size.height - 1);
    if (x1 < x0) [x0, x1] = [x1, x0];
    if (y1 < y0) [y0, y1] = [y1, y0];
    return this.carryState(
      new CanvasBox(x0, y0, x1, y1, this.label, this.confidence),
    );
  }
}

export function boxesToJson(boxes: readonly CanvasBox[]): { boxes: BoxJson[] } {
  return { boxes: boxes.map((b) => b.toJson()) };
}

export function boxesFromJson(raw: { boxes: BoxJson[] }): CanvasBox[] {
  return raw.boxes.map((b) => CanvasBox.fromJson(b));
}
