/** Typed client for the scoring service JSON API. */

export interface AuxFeatures {
  n_words: number;
  avg_word_len: number;
  lexical_richness: number;
  pos_distribution: number[];
  mask_counts: number[];
  redaction_pct: number;
  domain_onehot: number[];
}

export interface ScoreResponse {
  score: number;
  aux_features: AuxFeatures;
}

export interface Phrase {
  span_start: number;
  span_end: number;
  phrase: string;
  y_in: number;
  y_ex: number;
  ei: number;
  polarity: "enabler" | "disabler";
  char_start: number;
  char_end: number;
}

export interface ExplainResponse {
  score: number;
  phrases: Phrase[];
  absolute_fallback: boolean;
}

export interface ModelInfo {
  model_id: string;
  kind: string;
  explainable: boolean;
  [extra: string]: unknown;
}

export interface ScoreRequest {
  model_id: string;
  response_text: string;
  question?: string;
  domain_ids?: string[];
}

export interface ExplainRequest extends ScoreRequest {
  top_k?: number;
  epsilon?: number;
  max_n?: number;
}

/** status 0 means the request never reached the service (network failure). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : `service error ${status}`);
    this.name = "ApiError";
  }
}

/** The slice of fetch the client needs; mocks implement just this. */
export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
    signal?: AbortSignal;
  },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve, reject) => {
    if (signal?.aborted) {
      reject(new DOMException("aborted", "AbortError"));
      return;
    }
    const timer = setTimeout(() => {
      signal?.removeEventListener("abort", onAbort);
      resolve();
    }, ms);
    const onAbort = () => {
      clearTimeout(timer);
      reject(new DOMException("aborted", "AbortError"));
    };
    signal?.addEventListener("abort", onAbort, { once: true });
  });
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
    private readonly pollMs: number = 250,
  ) {}

  private async request(
    path: string,
    init?: Parameters<FetchLike>[1],
  ): Promise<{ status: number; body: unknown }> {
    let res;
    try {
      res = await this.fetchFn(this.base + path, init);
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") throw err;
      throw new ApiError(0, err instanceof Error ? err.message : String(err));
    }
    let body: unknown = null;
    try {
      body = await res.json();
    } catch {
      body = null;
    }
    if (!res.ok && res.status !== 202) {
      const detail =
        body && typeof body === "object" && "detail" in body
          ? (body as { detail: unknown }).detail
          : body;
      throw new ApiError(res.status, detail);
    }
    return { status: res.status, body };
  }

  private post(path: string, payload: unknown, signal?: AbortSignal) {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
      signal,
    });
  }

  async models(signal?: AbortSignal): Promise<ModelInfo[]> {
    const { body } = await this.request("/v1/models", { signal });
    return body as ModelInfo[];
  }

  async score(req: ScoreRequest, signal?: AbortSignal): Promise<ScoreResponse> {
    const { body } = await this.post("/v1/score", req, signal);
    return body as ScoreResponse;
  }

  /** Transparently follows the 202 + poll-token path for long documents. */
  async explain(req: ExplainRequest, signal?: AbortSignal): Promise<ExplainResponse> {
    const first = await this.post("/v1/explain", req, signal);
    if (first.status !== 202) return first.body as ExplainResponse;
    const token = (first.body as { poll: string }).poll;
    for (;;) {
      await sleep(this.pollMs, signal);
      const res = await this.request(`/v1/explain/${token}`, { signal });
      if (res.status !== 202) return res.body as ExplainResponse;
    }
  }
}
