import { describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(status: number, body: unknown, headers?: Record<string, string>): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json", ...headers },
  });
}

describe("api client", () => {
  it("posts rescore requests as JSON and returns the parsed body", async () => {
    const seen: Array<{ input: string; init?: RequestInit }> = [];
    const client = new ApiClient("http://svc", async (input, init) => {
      seen.push({ input, init });
      return jsonResponse(200, {
        score: 12.5,
        boxes: { boxes: [] },
        saliency_grid: [[1]],
        saliency_png_ref: "sal_x",
      });
    });
    const resp = await client.rescore({
      saliency_png_ref: "sal_x",
      boxes: { boxes: [{ x_min: 0, y_min: 0, x_max: 4, y_max: 4 }] },
      threshold: 0,
      mode: "union",
      scale: "percent",
    });
    expect(resp.score).toBe(12.5);
    expect(seen[0]!.input).toBe("http://svc/api/rescore");
    const body = JSON.parse(seen[0]!.init!.body as string);
    expect(body.boxes.boxes[0].x_max).toBe(4);
    expect(seen[0]!.init!.headers).toEqual({ "Content-Type": "application/json" });
  });

  it("sends score uploads as multipart form data with optional boxes", async () => {
    let form: FormData | undefined;
    const client = new ApiClient("", async (_input, init) => {
      form = init!.body as FormData;
      return jsonResponse(200, {
        score: 0,
        boxes: { boxes: [] },
        saliency_grid: [[1]],
        saliency_png_ref: "sal_y",
      });
    });
    await client.score(new Blob(["fake"]), "img.png", { boxes: [] }, { threshold: 0.25 });
    expect(form).toBeDefined();
    expect(form!.get("boxes")).toBe('{"boxes":[]}');
    expect(form!.get("threshold")).toBe("0.25");
    expect(form!.get("image")).toBeInstanceOf(Blob);
  });

  it("turns error bodies into ApiError with status and message", async () => {
    const client = new ApiClient("", async () =>
      jsonResponse(404, { error: "unknown saliency reference" }),
    );
    await expect(client.health()).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "unknown saliency reference",
    });
  });

  it("carries Retry-After through on busy responses", async () => {
    const client = new ApiClient("", async () =>
      jsonResponse(503, { error: "all inference slots busy" }, { "Retry-After": "2" }),
    );
    try {
      await client.saliency(new Blob(["x"]), "a.png");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(503);
      expect((err as ApiError).retryAfterS).toBe(2);
    }
  });

  it("copes with non-JSON error bodies", async () => {
    const client = new ApiClient("", async () => new Response("boom", { status: 500 }));
    await expect(client.health()).rejects.toMatchObject({ status: 500, message: "500" });
  });

  it("builds stored-map URLs from references", () => {
    const client = new ApiClient("http://svc");
    expect(client.saliencyPngUrl("sal_abc")).toBe("http://svc/api/saliency/sal_abc");
  });
});
