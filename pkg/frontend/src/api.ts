/** Typed REST client for the trainer service. `fetch` is injectable so
 * tests can pin request shapes without a network. */

import type { ScenarioDict, SessionRecordDict } from "./protocol.js";

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ ok: boolean; status: number; text(): Promise<string> }>;

export interface SeriesResponse {
  kind: string;
  series: [number, number][];
}

export interface TimelineEntryDict {
  timestamp_ms: number;
  kind: string;
  ref_id: string;
  score: number | null;
}

export interface AttemptResponse {
  attempt_id: string;
  score: number;
  detail: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private async request<T>(path: string, init?: Parameters<FetchLike>[1]): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    const text = await res.text();
    if (!res.ok) throw new ApiError(res.status, `${res.status} on ${path}: ${text}`);
    return JSON.parse(text) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<{ status: string; version: string }> {
    return this.request("/health");
  }

  createUser(displayName: string): Promise<{ user_id: string; display_name: string }> {
    return this.post("/users", { display_name: displayName });
  }

  scenarios(): Promise<{ scenarios: ScenarioDict[] }> {
    return this.request("/scenarios");
  }

  /** Gland mesh in OBJ text form (`v`/`f` lines). */
  async scenarioMeshObj(scenarioId: string): Promise<string> {
    const res = await this.fetchFn(`${this.base}/scenarios/${scenarioId}/mesh`);
    const text = await res.text();
    if (!res.ok) throw new ApiError(res.status, text);
    return text;
  }

  exercises(): Promise<{ exercises: { id: string; kind: string; title: string }[] }> {
    return this.request("/exercises");
  }

  createSession(userId: string, scenarioId: string): Promise<{ session_id: string }> {
    return this.post("/sessions", { user_id: userId, scenario_id: scenarioId });
  }

  postAttempt(exerciseId: string, userId: string, inputs: unknown): Promise<AttemptResponse> {
    return this.post(`/exercises/${exerciseId}/attempts`, { user_id: userId, inputs });
  }

  timeline(userId: string): Promise<{ timeline: TimelineEntryDict[] }> {
    return this.request(`/users/${userId}/timeline`);
  }

  series(userId: string, kind: string): Promise<SeriesResponse> {
    return this.request(`/users/${userId}/series?kind=${encodeURIComponent(kind)}`);
  }

  recommendations(userId: string): Promise<{ recommended: string[] }> {
    return this.request(`/users/${userId}/recommendations`);
  }

  replay(sessionId: string): Promise<SessionRecordDict> {
    return this.request(`/sessions/${sessionId}/replay`);
  }

  /** ws:// or wss:// URL of a session's live stream. */
  streamUrl(sessionId: string): string {
    return this.base.replace(/^http/, "ws") + `/sessions/${sessionId}/stream`;
  }
}
