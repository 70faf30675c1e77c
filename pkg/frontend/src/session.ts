/**
 * Editing session for one analyzed image.
 *
 * Every box edit recomputes the client grid estimate synchronously so the
 * UI never waits on the network, then schedules a debounced rescore
 * against the stored server map.  At most one reconciliation is in flight
 * at a time: a newer edit aborts the older request, and late responses
 * are dropped by generation check.  When the server answers, its value
 * replaces the estimate outright, which is what makes an exported session
 * agree with the command-line scorer on the same boxes.
 */

import { boxesToJson, CanvasBox } from "./boxes.js";
import { gridBoxScore } from "./grid.js";
import type { BoxesJson, ImageSize, RescoreRequest, ScoreResponse } from "./types.js";

export interface ScoreState {
  value: number;
  /** Where the displayed number came from. */
  source: "client" | "server";
  /** Server confirmed this exact value for the current boxes. */
  verified: boolean;
  /** A reconciliation is scheduled or in flight; the value may move. */
  pending: boolean;
  /** Reconciliation failed; the client estimate stands unconfirmed. */
  unverified: boolean;
  /** Server correction exceeded half a point, worth a note in the UI. */
  quantizationNote: boolean;
}

export interface HistoryEntry {
  at: number;
  score: number;
  source: "client" | "server";
  verified: boolean;
}

export interface Transport {
  rescore(req: RescoreRequest, signal?: AbortSignal): Promise<ScoreResponse>;
}

export interface SessionOptions {
  size: ImageSize;
  saliencyRef: string;
  grid: number[][];
  transport: Transport;
  boxes?: CanvasBox[];
  /** Server-confirmed score for the initial boxes, if one was returned. */
  initialScore?: number;
  threshold?: number;
  mode?: string;
  scale?: string;
  debounceMs?: number;
  now?: () => number;
}

const QUANTIZATION_NOTE_THRESHOLD = 0.5;

export class Session {
  readonly size: ImageSize;
  readonly saliencyRef: string;
  readonly grid: number[][];
  readonly threshold: number;
  readonly mode: string;
  readonly scale: string;

  score: ScoreState;
  readonly history: HistoryEntry[] = [];

  private boxes_: CanvasBox[];
  private readonly transport: Transport;
  private readonly debounceMs: number;
  private readonly now: () => number;
  private readonly listeners = new Set<() => void>();

  private generation = 0;
  private timer: ReturnType<typeof setTimeout> | undefined;
  private controller: AbortController | undefined;
  private inflight: Promise<void> | undefined;
  private lastEstimate = 0;

  constructor(opts: SessionOptions) {
    this.size = opts.size;
    this.saliencyRef = opts.saliencyRef;
    this.grid = opts.grid;
    this.transport = opts.transport;
    this.boxes_ = opts.boxes ?? [];
    this.threshold = opts.threshold ?? 0.0;
    this.mode = opts.mode ?? "union";
    this.scale = opts.scale ?? "percent";
    this.debounceMs = opts.debounceMs ?? 150;
    this.now = opts.now ?? Date.now;

    if (opts.initialScore !== undefined) {
      this.score = {
        value: opts.initialScore,
        source: "server",
        verified: true,
        pending: false,
        unverified: false,
        quantizationNote: false,
      };
      this.log(this.score);
    } else {
      this.lastEstimate = gridBoxScore(this.grid, this.size, this.boxes_);
      this.score = {
        value: this.lastEstimate,
        source: "client",
        verified: false,
        pending: false,
        unverified: false,
        quantizationNote: false,
      };
    }
  }

  static fromAnalysis(
    resp: ScoreResponse,
    size: ImageSize,
    opts: Omit<SessionOptions, "size" | "saliencyRef" | "grid" | "boxes" | "initialScore">,
  ): Session {
    return new Session({
      ...opts,
      size,
      saliencyRef: resp.saliency_png_ref,
      grid: resp.saliency_grid,
      boxes: resp.boxes.boxes.map((b) => CanvasBox.fromJson(b)),
      initialScore: resp.score,
    });
  }

  get boxes(): readonly CanvasBox[] {
    return this.boxes_;
  }

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  private log(state: ScoreState): void {
    this.history.push({
      at: this.now(),
      score: state.value,
      source: state.source,
      verified: state.verified,
    });
  }

  // -- box editing ---------------------------------------------------------

  setBoxes(boxes: CanvasBox[]): void {
    this.boxes_ = [...boxes];
    this.whatIf();
  }

  addBox(box: CanvasBox): void {
    this.boxes_ = [...this.boxes_, box];
    this.whatIf();
  }

  updateBox(index: number, box: CanvasBox): void {
    if (index < 0 || index >= this.boxes_.length) {
      throw new RangeError(`no box at index ${index}`);
    }
    const next = [...this.boxes_];
    next[index] = box;
    this.boxes_ = next;
    this.whatIf();
  }

  moveBox(index: number, dx: number, dy: number): void {
    const box = this.boxes_[index];
    if (box === undefined) throw new RangeError(`no box at index ${index}`);
    this.updateBox(index, box.movedBy(dx, dy, this.size));
  }

  resizeBox(
    index: number,
    edges: { xMin?: number; yMin?: number; xMax?: number; yMax?: number },
  ): void {
    const box = this.boxes_[index];
    if (box === undefined) throw new RangeError(`no box at index ${index}`);
    this.updateBox(index, box.resizedTo(edges, this.size));
  }

  removeBox(index: number): void {
    if (index < 0 || index >= this.boxes_.length) {
      throw new RangeError(`no box at index ${index}`);
    }
    this.boxes_ = this.boxes_.filter((_, i) => i !== index);
    this.whatIf();
  }

  clearBoxes(): void {
    this.boxes_ = [];
    this.whatIf();
  }

  // -- scoring -------------------------------------------------------------

  /** Instant client estimate plus a debounced server reconciliation. */
  private whatIf(): void {
    this.generation += 1;
    const gen = this.generation;

    // newer edits cancel the older reconciliation outright
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.controller?.abort();
    this.controller = undefined;

    this.lastEstimate = gridBoxScore(this.grid, this.size, this.boxes_);
    this.score = {
      value: this.lastEstimate,
      source: "client",
      verified: false,
      pending: true,
      unverified: false,
      quantizationNote: false,
    };
    this.notify();

    this.timer = setTimeout(() => {
      this.timer = undefined;
      this.inflight = this.reconcile(gen);
    }, this.debounceMs);
  }

  /** Run any scheduled reconciliation immediately and wait for it. */
  async flush(): Promise<void> {
    if (this.timer !== undefined) {
      clearTimeout(this.timer);
      this.timer = undefined;
      this.inflight = this.reconcile(this.generation);
    }
    if (this.inflight !== undefined) await this.inflight;
  }

  private async reconcile(gen: number): Promise<void> {
    if (gen !== this.generation) return;
    const controller = new AbortController();
    this.controller = controller;
    const estimate = this.lastEstimate;
    try {
      const resp = await this.transport.rescore(
        {
          saliency_png_ref: this.saliencyRef,
          boxes: boxesToJson(this.boxes_),
          threshold: this.threshold,
          mode: this.mode,
          scale: this.scale,
        },
        controller.signal,
      );
      if (gen !== this.generation) return; // superseded while in flight
      this.score = {
        value: resp.score,
        source: "server",
        verified: true,
        pending: false,
        unverified: false,
        quantizationNote:
          Math.abs(resp.score - estimate) > QUANTIZATION_NOTE_THRESHOLD,
      };
    } catch {
      if (gen !== this.generation) return; // aborted by a newer edit
      this.score = {
        value: estimate,
        source: "client",
        verified: false,
        pending: false,
        unverified: true,
        quantizationNote: false,
      };
    } finally {
      if (this.controller === controller) this.controller = undefined;
    }
    this.log(this.score);
    this.notify();
  }

  /** True while a rescore is scheduled or on the wire. */
  get reconciling(): boolean {
    return this.score.pending;
  }

  exportBoxes(): BoxesJson {
    return boxesToJson(this.boxes_);
  }

  dispose(): void {
    this.generation += 1;
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = undefined;
    this.controller?.abort();
    this.controller = undefined;
    this.listeners.clear();
  }
}
