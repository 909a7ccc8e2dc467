import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { LabelSession } from "../src/state";
import type { TaskView } from "../src/types";

function task(id: string): TaskView {
  return {
    task_id: id,
    sample_id: `sample-${id}`,
    spectrogram_uri: `/spectrogram/${id}.png`,
    audio_uri: `/audio/${id}.wav`,
    model_score: 0.5,
    strategy: "entropy",
    issued_at: 0,
    status: "pending",
  };
}

interface FakeBehavior {
  tasks?: TaskView[];
  labelStatus?: number;
  labelError?: string;
  networkDown?: boolean;
  delayMs?: number;
}

function fakeService(behavior: FakeBehavior) {
  const labelRequests: string[] = [];
  const fetchImpl = async (input: string, init?: RequestInit): Promise<Response> => {
    if (behavior.networkDown) throw new TypeError("connection refused");
    if (behavior.delayMs) {
      await new Promise((resolve) => setTimeout(resolve, behavior.delayMs));
    }
    if (input.includes("/tasks")) {
      return new Response(JSON.stringify({
        run_id: "r", iteration: 1, tasks: behavior.tasks ?? [],
      }), { status: 200 });
    }
    if (input.includes("/labels")) {
      const body = JSON.parse(String(init?.body));
      labelRequests.push(body.task_id);
      if (behavior.labelError) {
        return new Response(JSON.stringify({
          error: behavior.labelError, detail: "rejected",
        }), { status: behavior.labelStatus ?? 409 });
      }
      return new Response(JSON.stringify({
        ack: { task_id: body.task_id, status: "accepted", seq: labelRequests.length },
      }), { status: 200 });
    }
    throw new Error(`unexpected request ${input}`);
  };
  return { client: new ApiClient("http://svc", fetchImpl), labelRequests };
}

describe("LabelSession", () => {
  it("refill fills the queue and clears the banner", async () => {
    const { client } = fakeService({ tasks: [task("a"), task("b")] });
    const session = new LabelSession(client, "s");
    expect(await session.refill()).toBe(2);
    expect(session.current?.task_id).toBe("a");
    expect(session.banner).toBeNull();
  });

  it("empty queue enters idle state with an info banner", async () => {
    const { client } = fakeService({ tasks: [] });
    const session = new LabelSession(client, "s");
    await session.refill();
    expect(session.idle).toBe(true);
    expect(session.banner?.kind).toBe("info");
  });

  it("submit advances optimistically and counts acceptance", async () => {
    const { client, labelRequests } = fakeService({ tasks: [task("a"), task("b")] });
    const session = new LabelSession(client, "s");
    await session.refill();
    const outcome = await session.submit("positive", "orca", "SRKW");
    expect(outcome.kind).toBe("accepted");
    expect(labelRequests).toEqual(["a"]);
    expect(session.current?.task_id).toBe("b");
    expect(session.submittedCount).toBe(1);
  });

  it("duplicate keypress while in flight sends a single request", async () => {
    const { client, labelRequests } = fakeService({
      tasks: [task("a"), task("b")], delayMs: 20,
    });
    const session = new LabelSession(client, "s");
    await session.refill();
    const [first, second] = await Promise.all([
      session.submit("positive"),
      session.submit("positive"),
    ]);
    expect(first.kind).toBe("accepted");
    expect(second.kind).toBe("ignored");
    expect(labelRequests).toEqual(["a"]);
  });

  it("offline submission rolls the task back and raises a banner", async () => {
    const offline = fakeService({ networkDown: true });
    const session = new LabelSession(offline.client, "s");
    session.queue = [task("a")];
    const outcome = await session.submit("negative");
    expect(outcome.kind).toBe("offline");
    expect(session.current?.task_id).toBe("a"); // not lost
    expect(session.banner?.kind).toBe("error");
    expect(session.banner?.message).toContain("unreachable");
  });

  it("expired lease drops the task and prompts a re-fetch", async () => {
    const { client } = fakeService({
      tasks: [task("a"), task("b")], labelError: "task_expired",
    });
    const session = new LabelSession(client, "s");
    await session.refill();
    const outcome = await session.submit("positive");
    expect(outcome.kind).toBe("rejected");
    expect(session.banner?.needsRefetch).toBe(true);
    expect(session.current?.task_id).toBe("b");
  });

  it("other rejections roll back without dropping the task", async () => {
    const { client } = fakeService({
      tasks: [task("a")], labelError: "bad_label", labelStatus: 400,
    });
    const session = new LabelSession(client, "s");
    await session.refill();
    const outcome = await session.submit("positive");
    expect(outcome.kind).toBe("rejected");
    expect(session.current?.task_id).toBe("a");
    expect(session.banner?.needsRefetch).toBe(false);
  });

  it("skip requeues the task at the tail", async () => {
    const { client } = fakeService({ tasks: [task("a"), task("b")] });
    const session = new LabelSession(client, "s");
    await session.refill();
    const outcome = await session.submit("skip");
    expect(outcome.kind).toBe("skipped");
    expect(session.queue.map((t) => t.task_id)).toEqual(["b", "a"]);
    expect(session.submittedCount).toBe(0);
  });

  it("refill failure surfaces an error banner, never throws", async () => {
    const { client } = fakeService({ networkDown: true });
    const session = new LabelSession(client, "s");
    expect(await session.refill()).toBe(0);
    expect(session.banner?.kind).toBe("error");
  });

  it("refill deduplicates tasks already queued", async () => {
    const { client } = fakeService({ tasks: [task("a"), task("b")] });
    const session = new LabelSession(client, "s");
    await session.refill();
    await session.refill();
    expect(session.queue.map((t) => t.task_id)).toEqual(["a", "b"]);
  });
});
