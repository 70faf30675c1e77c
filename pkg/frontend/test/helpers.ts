import { readFileSync } from "node:fs";
import type { Transport } from "../src/session.js";
import type { BoxJson, RescoreRequest, ScoreResponse } from "../src/types.js";

export interface ParityFixture {
  width: number;
  height: number;
  grid: number[][];
  cases: Array<{ boxes: BoxJson[]; server_score: number }>;
}

export interface CliParityFixture {
  width: number;
  height: number;
  grid: number[][];
  boxes: { boxes: BoxJson[] };
  server_score: number;
  cli_stdout: string;
}

export function loadFixture<T>(name: string): T {
  const url = new URL(`./fixtures/${name}`, import.meta.url);
  return JSON.parse(readFileSync(url, "utf-8")) as T;
}

export function deferred<T>(): {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (err: unknown) => void;
} {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

export const sleep = (ms: number): Promise<void> =>
  new Promise((resolve) => setTimeout(resolve, ms));

/**
 * Scripted transport: scores come from the `respond` callback, which may
 * return a promise to simulate latency.  Honors abort signals unless
 * `ignoreAbort` simulates a transport that cannot cancel.
 */
export class MockTransport implements Transport {
  calls: RescoreRequest[] = [];
  active = 0;
  maxActive = 0;
  abortedCount = 0;

  constructor(
    private readonly respond: (req: RescoreRequest) => number | Promise<number>,
    private readonly ignoreAbort = false,
  ) {}

  rescore(req: RescoreRequest, signal?: AbortSignal): Promise<ScoreResponse> {
    this.calls.push(structuredClone(req));
    this.active += 1;
    this.maxActive = Math.max(this.maxActive, this.active);
    return new Promise((resolve, reject) => {
      let settled = false;
      const settle = (fn: () => void): void => {
        if (settled) return;
        settled = true;
        this.active -= 1;
        fn();
      };
      if (!this.ignoreAbort && signal !== undefined) {
        if (signal.aborted) {
          this.abortedCount += 1;
          settle(() => reject(new DOMException("aborted", "AbortError")));
          return;
        }
        signal.addEventListener("abort", () => {
          this.abortedCount += 1;
          settle(() => reject(new DOMException("aborted", "AbortError")));
        });
      }
      Promise.resolve(this.respond(req)).then(
        (score) =>
          settle(() =>
            resolve({
              score,
              boxes: { boxes: req.boxes.boxes },
              saliency_grid: [],
              saliency_png_ref: req.saliency_png_ref,
            }),
          ),
        (err) => settle(() => reject(err)),
      );
    });
  }
}
