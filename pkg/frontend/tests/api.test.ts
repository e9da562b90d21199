import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

const ITEM = {
  specimen_id: "sp-1",
  image_ids: ["img-a"],
  probabilities: [0.9, 0.1],
  predicted_species: "stephensi",
  severity: "critical",
  reason: "alert",
  has_cam: true,
  created_at: "2026-08-01T00:00:00+00:00",
  status: "pending",
  trap_id: "trap-7",
};

describe("ApiClient", () => {
  it("sends the bearer token and parses the pending queue", async () => {
    const fetchFn = vi.fn(async (url: string, init?: RequestInit) => {
      expect(url).toBe("http://svc:8000/review/pending");
      expect((init?.headers as Record<string, string>).Authorization)
        .toBe("Bearer sekrit");
      return jsonResponse([ITEM, { junk: true }]);
    });
    const client = new ApiClient({ baseUrl: "http://svc:8000/", token: "sekrit" },
                                 fetchFn);
    const items = await client.listPending();
    expect(fetchFn).toHaveBeenCalledOnce();
    expect(items).toHaveLength(1); // malformed rows are dropped, not invented
    expect(items[0]!.specimen_id).toBe("sp-1");
  });

  it("raises ApiError with the server's detail on non-2xx", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({ detail: "already confirmed; pass force to override" }, 409));
    const client = new ApiClient({ baseUrl: "http://svc" }, fetchFn);
    const err = await client
      .submitDecision("sp-1", { action: "confirm" })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).message).toContain("already confirmed");
  });

  it("wraps transport failures as status-0 ApiError", async () => {
    const fetchFn = vi.fn(async () => {
      throw new TypeError("fetch failed");
    });
    const client = new ApiClient({ baseUrl: "http://down" }, fetchFn);
    const err = await client.listPending().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).isNetwork).toBe(true);
  });

  it("posts decisions as JSON", async () => {
    const fetchFn = vi.fn(async (url: string, init?: RequestInit) => {
      expect(url).toBe("http://svc/review/sp-9/decision");
      expect(init?.method).toBe("POST");
      expect(JSON.parse(init?.body as string)).toEqual({
        action: "override",
        label: "quadrimaculatus",
        reviewer: "alice",
      });
      return jsonResponse({
        specimen_id: "sp-9",
        status: "overridden",
        review_history_length: 1,
        effective_label: { genus: "Anopheles", species: "quadrimaculatus" },
      });
    });
    const client = new ApiClient({ baseUrl: "http://svc" }, fetchFn);
    const result = await client.submitDecision("sp-9", {
      action: "override",
      label: "quadrimaculatus",
      reviewer: "alice",
    });
    expect(result.status).toBe("overridden");
    expect(result.effective_label?.species).toBe("quadrimaculatus");
  });

  it("rejects malformed detail payloads instead of rendering them", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ nope: 1 }));
    const client = new ApiClient({ baseUrl: "http://svc" }, fetchFn);
    await expect(client.getReview("sp-1")).rejects.toThrow("malformed");
  });
});
