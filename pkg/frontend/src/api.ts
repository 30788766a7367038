/**
 * Thin client for the retrieval service. Each query pane allows one
 * in-flight request; a newer request aborts the superseded one.
 */

export interface ResultItem {
  id: string;
  score: number;
  series: number[];
  vol_series: number[];
  labels?: Record<string, string>;
  caption?: string;
}

export interface SketchResponse {
  results: ResultItem[];
  resampled_query: number[];
}

export interface TextResponse {
  results: ResultItem[];
}

export interface ServiceInfo {
  dataset: string;
  generation: number;
  sketch_index: { size: number; dim: number };
  text_index: { size: number; dim: number } | null;
  model_checksums: Record<string, string>;
}

export class UnknownTokensError extends Error {
  tokens: string[];

  constructor(tokens: string[]) {
    super(`query has no in-vocabulary tokens: ${tokens.join(", ")}`);
    this.name = "UnknownTokensError";
    this.tokens = tokens;
  }
}

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

async function errorFromResponse(response: Response): Promise<Error> {
  let detail: unknown = null;
  try {
    detail = (await response.json()).detail;
  } catch {
    /* non-JSON body */
  }
  if (
    response.status === 422 &&
    detail !== null &&
    typeof detail === "object" &&
    Array.isArray((detail as { unknown_tokens?: unknown }).unknown_tokens)
  ) {
    return new UnknownTokensError(
      (detail as { unknown_tokens: string[] }).unknown_tokens,
    );
  }
  const message = typeof detail === "string" ? detail : response.statusText;
  return new ApiError(response.status, message || `HTTP ${response.status}`);
}

export class ApiClient {
  readonly baseUrl: string;
  private inflight = new Map<string, AbortController>();

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  /** Abort any previous request in the same pane and own the slot. */
  private takeSlot(pane: string): AbortSignal {
    this.inflight.get(pane)?.abort();
    const controller = new AbortController();
    this.inflight.set(pane, controller);
    return controller.signal;
  }

  private async post<T>(pane: string, path: string, body: unknown): Promise<T> {
    const signal = this.takeSlot(pane);
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    return (await response.json()) as T;
  }

  querySketch(points: number[], k: number): Promise<SketchResponse> {
    return this.post<SketchResponse>("sketch", "/api/query/sketch", { points, k });
  }

  queryText(text: string, k: number): Promise<TextResponse> {
    return this.post<TextResponse>("text", "/api/query/text", { text, k });
  }

  async info(): Promise<ServiceInfo> {
    const response = await fetch(`${this.baseUrl}/api/info`);
    if (!response.ok) throw await errorFromResponse(response);
    return (await response.json()) as ServiceInfo;
  }

  async health(): Promise<{ status: string }> {
    const response = await fetch(`${this.baseUrl}/api/health`);
    if (!response.ok) throw await errorFromResponse(response);
    return (await response.json()) as { status: string };
  }
}

/** Base URL: ?api=... query parameter, else same origin, else localhost. */
export function resolveBaseUrl(location: { search: string; origin: string }): string {
  const params = new URLSearchParams(location.search);
  const fromQuery = params.get("api");
  if (fromQuery) return fromQuery;
  if (location.origin && location.origin !== "null" && !location.origin.startsWith("file:")) {
    return location.origin;
  }
  return "http://127.0.0.1:8099";
}
