import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("requests tasks with n and session", async () => {
    const calls: string[] = [];
    const client = new ApiClient("http://svc", async (input) => {
      calls.push(input);
      return jsonResponse({ run_id: "r", iteration: 1, tasks: [] });
    });
    const res = await client.getTasks(7, "sess");
    expect(res.tasks).toEqual([]);
    expect(calls[0]).toBe("http://svc/tasks?n=7&session=sess");
  });

  it("posts labels as JSON", async () => {
    let captured: RequestInit | undefined;
    const client = new ApiClient("http://svc", async (_input, init) => {
      captured = init;
      return jsonResponse({ ack: { task_id: "t1", status: "accepted" } });
    });
    await client.submitLabel({ task_id: "t1", label: "positive",
                               species: "orca", ecotype: "SRKW" });
    expect(captured?.method).toBe("POST");
    const body = JSON.parse(String(captured?.body));
    expect(body).toEqual({ task_id: "t1", label: "positive",
                           species: "orca", ecotype: "SRKW" });
  });

  it("maps error payloads onto ApiError", async () => {
    const client = new ApiClient("http://svc", async () =>
      jsonResponse({ error: "unknown_task", detail: "nope" }, 404));
    const err = await client.submitLabel({ task_id: "x", label: "negative" })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("unknown_task");
    expect(err.status).toBe(404);
  });

  it("builds media urls from task uris", () => {
    const client = new ApiClient("http://svc");
    const task = { spectrogram_uri: "/spectrogram/a.png", audio_uri: "/audio/a.wav" };
    expect(client.spectrogramUrl(task)).toBe("http://svc/spectrogram/a.png");
    expect(client.audioUrl(task)).toBe("http://svc/audio/a.wav");
  });

  it("propagates network failures", async () => {
    const client = new ApiClient("http://svc", async () => {
      throw new TypeError("fetch failed");
    });
    await expect(client.stats()).rejects.toThrow("fetch failed");
    expect(vi.isMockFunction(fetch)).toBe(false);
  });
});
