/** Typed client for the recommendation service JSON API. */

export type Gender = "female" | "male";

export interface AnimeSummary {
  anime_id: number;
  name: string;
  genres: string[];
  members: number;
  mean_score: number;
}

export interface ListEntry {
  anime_id: number;
  name: string;
  predicted_rating: number;
  cluster: number;
  genres: string[];
  members: number;
}

export interface Recommendations {
  similar: ListEntry[];
  may_like: ListEntry[];
}

/** Error body the service returns: {code, message} plus the HTTP status. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const browserFetch: FetchLike = (input, init) => fetch(input, init);

export class Client {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(base = "", fetchFn: FetchLike = browserFetch) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Response> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let code = "error";
      let message = `HTTP ${resp.status}`;
      try {
        const data = (await resp.json()) as { code?: string; message?: string };
        if (typeof data.code === "string") code = data.code;
        if (typeof data.message === "string") message = data.message;
      } catch {
        // non-JSON error body; keep the fallback
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  async createSession(age: number, gender: Gender): Promise<string> {
    const resp = await this.request("POST", "/api/session", { age, gender });
    const data = (await resp.json()) as { session_id: string };
    return data.session_id;
  }

  async searchAnime(query: string, limit?: number): Promise<AnimeSummary[]> {
    const params = new URLSearchParams({ query });
    if (limit !== undefined) params.set("limit", String(limit));
    const resp = await this.request("GET", `/api/anime?${params.toString()}`);
    const data = (await resp.json()) as { results: AnimeSummary[] };
    return data.results;
  }

  async rateAnime(
    sessionId: string,
    animeId: number,
    score: number,
  ): Promise<void> {
    await this.request("POST", `/api/session/${sessionId}/ratings`, {
      anime_id: animeId,
      score,
    });
  }

  async recommendations(sessionId: string): Promise<Recommendations> {
    const resp = await this.request(
      "GET",
      `/api/session/${sessionId}/recommendations`,
    );
    return (await resp.json()) as Recommendations;
  }

  async sendFeedback(sessionId: string, listScore: number): Promise<void> {
    await this.request("POST", `/api/session/${sessionId}/feedback`, {
      list_score: listScore,
    });
  }
}
