/**
 * Browser entry point: wires the upload form, canvas editor, score panel
 * and export buttons to a Session.  Everything testable lives in the
 * modules this file imports; this one only touches the DOM.
 */

import { ApiClient, ApiError } from "./api.js";
import { CanvasBox } from "./boxes.js";
import { gridToPixels } from "./heatmap.js";
import { boxesFileContents, scoreLogCsv } from "./export.js";
import { Session } from "./session.js";
import type { ImageSize, ScoreResponse } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing #${id}`);
  return el as T;
};

const api = new ApiClient("");

interface AppState {
  session: Session | undefined;
  image: HTMLImageElement | undefined;
  size: ImageSize;
  selected: number;
  drag:
    | { kind: "move"; index: number; lastX: number; lastY: number }
    | { kind: "resize"; index: number; edge: string }
    | { kind: "draw"; startX: number; startY: number }
    | undefined;
  opacity: number;
}

const state: AppState = {
  session: undefined,
  image: undefined,
  size: { width: 0, height: 0 },
  selected: -1,
  drag: undefined,
  opacity: 0.7,
};

const canvas = $<HTMLCanvasElement>("editor");
const ctx = canvas.getContext("2d")!;
const banner = $<HTMLDivElement>("banner");
const scoreValue = $<HTMLSpanElement>("score-value");
const scoreNote = $<HTMLSpanElement>("score-note");

function showBanner(text: string, retry?: () => void): void {
  banner.textContent = text;
  banner.hidden = false;
  if (retry !== undefined) {
    const button = document.createElement("button");
    button.textContent = "Retry";
    button.addEventListener("click", () => {
      banner.hidden = true;
      retry();
    });
    banner.append(" ", button);
  }
}

function renderScore(): void {
  const s = state.session;
  if (s === undefined) {
    scoreValue.textContent = "–";
    scoreNote.textContent = "";
    return;
  }
  scoreValue.textContent = s.score.value.toFixed(2);
  const notes: string[] = [];
  if (s.score.pending) notes.push("updating…");
  if (s.score.unverified) notes.push("unverified estimate");
  if (s.score.quantizationNote) {
    notes.push("grid preview was off by more than 0.5, showing exact value");
  }
  scoreNote.textContent = notes.join(" · ");
}

function draw(): void {
  const s = state.session;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (state.image !== undefined) {
    ctx.drawImage(state.image, 0, 0, canvas.width, canvas.height);
  }
  if (s === undefined) return;

  if (state.opacity > 0) {
    const pixels = gridToPixels(s.grid, state.opacity);
    if (pixels.width > 0 && pixels.height > 0) {
      const off = document.createElement("canvas");
      off.width = pixels.width;
      off.height = pixels.height;
      off
        .getContext("2d")!
        .putImageData(new ImageData(pixels.data, pixels.width, pixels.height), 0, 0);
      ctx.imageSmoothingEnabled = true;
      ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
    }
  }

  const sx = canvas.width / state.size.width;
  const sy = canvas.height / state.size.height;
  s.boxes.forEach((box, i) => {
    ctx.lineWidth = i === state.selected ? 3 : 1.5;
    ctx.strokeStyle = i === state.selected ? "#ff3b30" : "#ffffff";
    ctx.strokeRect(
      box.xMin * sx,
      box.yMin * sy,
      box.width * sx,
      box.height * sy,
    );
    if (box.label !== undefined) {
      ctx.font = "12px sans-serif";
      ctx.fillStyle = "#ffffff";
      ctx.fillText(box.label, box.xMin * sx + 2, box.yMin * sy - 4);
    }
  });
  renderScore();
}

function canvasToImage(ev: MouseEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * state.size.width,
    y: ((ev.clientY - rect.top) / rect.height) * state.size.height,
  };
}

function hitBox(x: number, y: number): number {
  const s = state.session;
  if (s === undefined) return -1;
  for (let i = s.boxes.length - 1; i >= 0; i--) {
    if (s.boxes[i]!.containsPoint(x, y)) return i;
  }
  return -1;
}

canvas.addEventListener("mousedown", (ev) => {
  const s = state.session;
  if (s === undefined) return;
  const { x, y } = canvasToImage(ev);
  const hit = hitBox(Math.round(x), Math.round(y));
  if (hit >= 0) {
    state.selected = hit;
    state.drag = { kind: "move", index: hit, lastX: x, lastY: y };
  } else {
    state.drag = { kind: "draw", startX: x, startY: y };
  }
  draw();
});

canvas.addEventListener("mousemove", (ev) => {
  const s = state.session;
  const drag = state.drag;
  if (s === undefined || drag === undefined) return;
  const { x, y } = canvasToImage(ev);
  if (drag.kind === "move") {
    const dx = Math.round(x - drag.lastX);
    const dy = Math.round(y - drag.lastY);
    if (dx !== 0 || dy !== 0) {
      s.moveBox(drag.index, dx, dy);
      drag.lastX += dx;
      drag.lastY += dy;
      draw();
    }
  }
});

canvas.addEventListener("mouseup", (ev) => {
  const s = state.session;
  const drag = state.drag;
  state.drag = undefined;
  if (s === undefined || drag === undefined) return;
  if (drag.kind === "draw") {
    const { x, y } = canvasToImage(ev);
    const x0 = Math.round(Math.min(drag.startX, x));
    const y0 = Math.round(Math.min(drag.startY, y));
    const x1 = Math.round(Math.max(drag.startX, x));
    const y1 = Math.round(Math.max(drag.startY, y));
    if (x1 - x0 >= 2 && y1 - y0 >= 2) {
      s.addBox(new CanvasBox(0, 0, 1, 1).resizedTo(
        { xMin: x0, yMin: y0, xMax: x1, yMax: y1 },
        state.size,
      ));
      state.selected = s.boxes.length - 1;
    }
  }
  draw();
});

document.addEventListener("keydown", (ev) => {
  const s = state.session;
  if (s === undefined) return;
  if ((ev.key === "Delete" || ev.key === "Backspace") && state.selected >= 0) {
    s.removeBox(state.selected);
    state.selected = -1;
    draw();
    ev.preventDefault();
  }
});

$<HTMLInputElement>("opacity").addEventListener("input", (ev) => {
  state.opacity = Number((ev.target as HTMLInputElement).value) / 100;
  draw();
});

async function analyze(file: File): Promise<void> {
  banner.hidden = true;
  let resp: ScoreResponse;
  try {
    resp = await api.score(file, file.name);
  } catch (err) {
    if (err instanceof ApiError && err.status === 503) {
      const wait = err.retryAfterS !== undefined ? ` (retry in ${err.retryAfterS}s)` : "";
      showBanner(`Service is busy or still loading${wait}.`, () => void analyze(file));
      return;
    }
    if (err instanceof ApiError && err.status === 502) {
      // no logo detector behind the service: fall back to saliency only
      const sal = await api.saliency(file, file.name);
      await startSession(file, {
        score: 0,
        boxes: { boxes: [] },
        saliency_grid: [],
        saliency_png_ref: sal.saliency_png_ref,
      });
      return;
    }
    showBanner(err instanceof Error ? err.message : String(err));
    return;
  }
  await startSession(file, resp);
}

async function startSession(file: File, resp: ScoreResponse): Promise<void> {
  const image = new Image();
  const url = URL.createObjectURL(file);
  await new Promise<void>((resolve, reject) => {
    image.onload = () => resolve();
    image.onerror = () => reject(new Error("image failed to decode"));
    image.src = url;
  });
  state.image = image;
  state.size = { width: image.naturalWidth, height: image.naturalHeight };
  canvas.width = image.naturalWidth;
  canvas.height = image.naturalHeight;

  state.session?.dispose();
  state.session = Session.fromAnalysis(resp, state.size, { transport: api });
  state.session.subscribe(draw);
  state.selected = -1;
  draw();
}

$<HTMLInputElement>("upload").addEventListener("change", (ev) => {
  const input = ev.target as HTMLInputElement;
  const file = input.files?.[0];
  if (file !== undefined) void analyze(file);
});

function download(name: string, contents: string, type: string): void {
  const blob = new Blob([contents], { type });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

$<HTMLButtonElement>("export-boxes").addEventListener("click", () => {
  const s = state.session;
  if (s === undefined) return;
  void s.flush().then(() => {
    download("boxes.json", boxesFileContents(s.exportBoxes()), "application/json");
  });
});

$<HTMLButtonElement>("export-log").addEventListener("click", () => {
  const s = state.session;
  if (s === undefined) return;
  download("scores.csv", scoreLogCsv(s.history), "text/csv");
});

void api.health().then(
  (health) => {
    if (health.status !== "ok") {
      showBanner("Model checkpoint is not loaded; uploads will fail until it is.");
    }
  },
  () => showBanner("Scoring service unreachable."),
);
