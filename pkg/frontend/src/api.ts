/** Thin typed client for the curation-service HTTP/JSON API. */

import type {
  Ack,
  LabelSubmission,
  StatsResponse,
  TasksResponse,
  Vocab,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly code: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    public readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(
        body.detail ?? `HTTP ${response.status}`,
        response.status,
        body.error ?? "http_error",
      );
    }
    return body as T;
  }

  healthz(): Promise<{ status: string; run_id: string; iteration: number }> {
    return this.request("/healthz");
  }

  getTasks(n: number, session: string): Promise<TasksResponse> {
    const params = new URLSearchParams({ n: String(n), session });
    return this.request(`/tasks?${params}`);
  }

  submitLabel(submission: LabelSubmission): Promise<{ ack: Ack }> {
    return this.request("/labels", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
  }

  retrain(): Promise<{ status: string; iteration: number }> {
    return this.request("/retrain", { method: "POST" });
  }

  stats(): Promise<StatsResponse> {
    return this.request("/stats");
  }

  vocab(): Promise<{ vocab: Vocab }> {
    return this.request("/vocab");
  }

  spectrogramUrl(task: { spectrogram_uri: string }): string {
    return this.baseUrl + task.spectrogram_uri;
  }

  audioUrl(task: { audio_uri: string }): string {
    return this.baseUrl + task.audio_uri;
  }
}
