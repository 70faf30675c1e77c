/**
 * Thin typed client for the scoring service.
 *
 * The fetch implementation is injectable so tests can run against a stub
 * transport; the browser app passes nothing and uses the global fetch.
 */

import type {
  BoxesJson,
  HealthResponse,
  RescoreRequest,
  SaliencyResponse,
  ScoreResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly retryAfterS?: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function raiseFor(resp: Response): Promise<Response> {
  if (resp.ok) return resp;
  let message = `${resp.status}`;
  try {
    const body = (await resp.json()) as Record<string, unknown>;
    const detail = body["error"] ?? body["detail"];
    if (typeof detail === "string") message = detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  const retryAfter = resp.headers.get("Retry-After");
  throw new ApiError(
    resp.status,
    message,
    retryAfter !== null ? Number(retryAfter) : undefined,
  );
}

export class ApiClient {
  constructor(
    private readonly baseUrl = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async health(): Promise<HealthResponse> {
    const resp = await raiseFor(await this.fetchImpl(`${this.baseUrl}/api/health`));
    return (await resp.json()) as HealthResponse;
  }

  /** Upload an image and get a saliency reference without scoring it. */
  async saliency(image: Blob, filename: string): Promise<SaliencyResponse> {
    const form = new FormData();
    form.append("image", image, filename);
    const resp = await raiseFor(
      await this.fetchImpl(`${this.baseUrl}/api/saliency`, {
        method: "POST",
        body: form,
      }),
    );
    return (await resp.json()) as SaliencyResponse;
  }

  /**
   * Upload an image and score it in one call.  Without boxes the service
   * runs its logo detector; pass boxes to score a fixed layout.
   */
  async score(
    image: Blob,
    filename: string,
    boxes?: BoxesJson,
    options: { threshold?: number; mode?: string; scale?: string } = {},
  ): Promise<ScoreResponse> {
    const form = new FormData();
    form.append("image", image, filename);
    if (boxes !== undefined) form.append("boxes", JSON.stringify(boxes));
    if (options.threshold !== undefined) {
      form.append("threshold", String(options.threshold));
    }
    if (options.mode !== undefined) form.append("mode", options.mode);
    if (options.scale !== undefined) form.append("scale", options.scale);
    const resp = await raiseFor(
      await this.fetchImpl(`${this.baseUrl}/api/score`, {
        method: "POST",
        body: form,
      }),
    );
    return (await resp.json()) as ScoreResponse;
  }

  /** Re-score stored saliency under new boxes; never re-runs the model. */
  async rescore(req: RescoreRequest, signal?: AbortSignal): Promise<ScoreResponse> {
    const resp = await raiseFor(
      await this.fetchImpl(`${this.baseUrl}/api/rescore`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(req),
        signal: signal ?? null,
      }),
    );
    return (await resp.json()) as ScoreResponse;
  }

  /** URL serving the stored 16-bit saliency PNG for an analyze result. */
  saliencyPngUrl(ref: string): string {
    return `${this.baseUrl}/api/saliency/${ref}`;
  }
}
