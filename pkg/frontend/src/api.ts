/** Typed client for the surveillance service HTTP/JSON API. */

import {
  DecisionRequest,
  DecisionResult,
  ReviewDetail,
  ReviewItem,
  Summary,
  isReviewDetail,
  isReviewItem,
} from "./types.js";

export interface ApiConfig {
  baseUrl: string;
  token?: string | null;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  /** True for transport-level failures (server unreachable, DNS, abort). */
  get isNetwork(): boolean {
    return this.status === 0;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly base: string;
  private readonly token: string | null;
  private readonly fetchFn: FetchLike;

  constructor(cfg: ApiConfig, fetchFn?: FetchLike) {
    this.base = cfg.baseUrl.replace(/\/+$/, "");
    this.token = cfg.token ?? null;
    this.fetchFn = fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request(path: string, init: RequestInit = {}): Promise<unknown> {
    const headers: Record<string, string> = {
      ...(init.headers as Record<string, string> | undefined),
    };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (init.body) headers["Content-Type"] = "application/json";
    let resp: Response;
    try {
      resp = await this.fetchFn(this.base + path, { ...init, headers });
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    const text = await resp.text();
    if (!resp.ok) {
      let detail = text;
      try {
        const parsed = JSON.parse(text) as { detail?: unknown };
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        /* plain-text error body */
      }
      throw new ApiError(resp.status, detail || resp.statusText);
    }
    return text ? (JSON.parse(text) as unknown) : null;
  }

  async health(): Promise<{ status: string; model_loaded: boolean }> {
    return (await this.request("/health")) as {
      status: string;
      model_loaded: boolean;
    };
  }

  async listPending(): Promise<ReviewItem[]> {
    const raw = await this.request("/review/pending");
    if (!Array.isArray(raw)) throw new ApiError(0, "malformed queue payload");
    return raw.filter(isReviewItem);
  }

  async getReview(specimenId: string): Promise<ReviewDetail> {
    const raw = await this.request(`/review/${encodeURIComponent(specimenId)}`);
    if (!isReviewDetail(raw)) throw new ApiError(0, "malformed review payload");
    return raw;
  }

  async submitDecision(
    specimenId: string,
    body: DecisionRequest,
  ): Promise<DecisionResult> {
    return (await this.request(
      `/review/${encodeURIComponent(specimenId)}/decision`,
      { method: "POST", body: JSON.stringify(body) },
    )) as DecisionResult;
  }

  async getSummary(since?: string): Promise<Summary> {
    const query = since ? `?since=${encodeURIComponent(since)}` : "";
    return (await this.request(`/summary${query}`)) as Summary;
  }
}
