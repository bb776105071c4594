/** Typed client for the gateway's /api/v1 HTTP interface. */

import type {
  CamResponse,
  CandidateListing,
  ErrorEnvelope,
  EvalReportBody,
  ImageListing,
  InpaintAccepted,
  InpaintSubmission,
  JobInfo,
  MaskResponse,
  PromptListing,
  SaliencyResponse,
  SessionInfo,
} from "./types.js";
import type { ScribbleSetJson } from "./scribble.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export function newIdempotencyKey(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c && typeof c.randomUUID === "function") {
    return c.randomUUID();
  }
  return `${Date.now().toString(36)}-${Math.random().toString(36).slice(2)}`;
}

export interface ApiClientOptions {
  /** defaults to "/api/v1" (console is served by the gateway itself). */
  baseUrl?: string;
  /** injectable for tests. */
  fetchFn?: typeof fetch;
}

interface RequestOptions {
  body?: unknown;
  idempotencyKey?: string;
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? "/api/v1").replace(/\/$/, "");
    this.fetchFn = options.fetchFn ?? globalThis.fetch.bind(globalThis);
  }

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    options: RequestOptions = {},
  ): Promise<T> {
    const headers: Record<string, string> = {};
    const init: RequestInit = { method, headers };
    if (options.body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(options.body);
    }
    if (options.idempotencyKey !== undefined) {
      headers["Idempotency-Key"] = options.idempotencyKey;
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let code = `HTTP_${response.status}`;
      let message = response.statusText || code;
      try {
        const envelope = (await response.json()) as Partial<ErrorEnvelope>;
        if (envelope.error) {
          code = envelope.error.code ?? code;
          message = envelope.error.message ?? message;
        }
      } catch {
        // non-JSON error body: keep the HTTP status fallback
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  listImages(params: {
    label?: string;
    page?: number;
    pageSize?: number;
  } = {}): Promise<ImageListing> {
    const query = new URLSearchParams();
    if (params.label !== undefined) {
      query.set("label", params.label);
    }
    if (params.page !== undefined) {
      query.set("page", String(params.page));
    }
    if (params.pageSize !== undefined) {
      query.set("page_size", String(params.pageSize));
    }
    const suffix = query.toString();
    return this.request("GET", `/images${suffix ? `?${suffix}` : ""}`);
  }

  /** URL of the raw image file, for <img src>. */
  imageFileUrl(imageId: string): string {
    return `${this.baseUrl}/images/${encodeURIComponent(imageId)}/file`;
  }

  getCam(
    imageId: string,
    params: { method?: string; threshold?: number } = {},
  ): Promise<CamResponse> {
    const query = new URLSearchParams();
    if (params.method !== undefined) {
      query.set("method", params.method);
    }
    if (params.threshold !== undefined) {
      query.set("threshold", String(params.threshold));
    }
    const suffix = query.toString();
    return this.request(
      "GET",
      `/images/${encodeURIComponent(imageId)}/cam${suffix ? `?${suffix}` : ""}`,
    );
  }

  saveMask(
    imageId: string,
    scribbles: ScribbleSetJson,
    idempotencyKey?: string,
  ): Promise<MaskResponse> {
    return this.request("POST", `/images/${encodeURIComponent(imageId)}/mask`, {
      body: scribbles,
      idempotencyKey,
    });
  }

  maskUrl(maskId: string): string {
    return `${this.baseUrl}/masks/${encodeURIComponent(maskId)}`;
  }

  /** Raw mask PNG bytes (white = masked), for preview verification. */
  async fetchMaskBytes(maskId: string): Promise<ArrayBuffer> {
    const response = await this.fetchFn(this.maskUrl(maskId), { method: "GET" });
    if (!response.ok) {
      throw new ApiError(response.status, `HTTP_${response.status}`, "mask fetch failed");
    }
    return response.arrayBuffer();
  }

  getPrompts(): Promise<PromptListing> {
    return this.request("GET", "/prompts");
  }

  submitInpaint(
    submission: InpaintSubmission,
    idempotencyKey?: string,
  ): Promise<InpaintAccepted> {
    return this.request("POST", "/inpaint", { body: submission, idempotencyKey });
  }

  getJob(jobId: string): Promise<JobInfo> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}`);
  }

  getCandidates(jobId: string): Promise<CandidateListing> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}/candidates`);
  }

  selectCandidate(
    sessionId: string,
    candidateId: string,
    idempotencyKey?: string,
  ): Promise<SessionInfo> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/select`, {
      body: { candidate_id: candidateId },
      idempotencyKey,
    });
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  latestReport(): Promise<EvalReportBody> {
    return this.request("GET", "/reports/latest");
  }

  getSaliency(imageId: string): Promise<SaliencyResponse> {
    return this.request("GET", `/saliency/${encodeURIComponent(imageId)}`);
  }
}
