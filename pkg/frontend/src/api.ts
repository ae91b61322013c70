import type { MapJson, OpenSessionJson, SessionState } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** The slice of the service the UI talks to; the test suite substitutes an
 * in-memory implementation of the same shape. */
export interface SessionService {
  openSession(taskId: string, workerId: string): Promise<OpenSessionJson>;
  stimulus(sessionId: string): Promise<SessionState>;
  answer(
    sessionId: string,
    response: "can" | "cannot",
    latencyS: number,
    punchSeq: number,
  ): Promise<SessionState>;
  map(taskId: string, tau: number): Promise<MapJson>;
  imageUrl(path: string): string;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class PunchholeApi implements SessionService {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly base: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  imageUrl(path: string): string {
    return this.base + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  openSession(taskId: string, workerId: string): Promise<OpenSessionJson> {
    return this.request(`/v1/tasks/${taskId}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ worker_id: workerId }),
    });
  }

  stimulus(sessionId: string): Promise<SessionState> {
    return this.request(`/v1/sessions/${sessionId}/stimulus`);
  }

  answer(
    sessionId: string,
    response: "can" | "cannot",
    latencyS: number,
    punchSeq: number,
  ): Promise<SessionState> {
    return this.request(`/v1/sessions/${sessionId}/answer`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        response,
        latency_s: latencyS,
        punch_seq: punchSeq,
      }),
    });
  }

  map(taskId: string, tau: number): Promise<MapJson> {
    return this.request(`/v1/tasks/${taskId}/map?tau=${tau}`);
  }
}
