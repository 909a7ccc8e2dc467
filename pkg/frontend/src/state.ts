/** Task-queue session logic, kept framework-free so it is testable headless.
 *
 * Submissions are optimistic: the console advances to the next task
 * immediately and rolls the task back to the front of the queue if the
 * service rejects or is unreachable. A submission in flight blocks further
 * submits (duplicate keypresses collapse into one request), and every
 * request carries the task_id of an explicitly user-labeled task.
 */

import { ApiClient, ApiError } from "./api.js";
import type { LabelChoice, TaskView } from "./types.js";

export type BannerKind = "error" | "info";

export interface Banner {
  kind: BannerKind;
  message: string;
  needsRefetch: boolean;
}

export type SubmitOutcome =
  | { kind: "accepted"; taskId: string }
  | { kind: "skipped"; taskId: string }
  | { kind: "rejected"; taskId: string; code: string }
  | { kind: "offline"; taskId: string }
  | { kind: "ignored" };

export class LabelSession {
  queue: TaskView[] = [];
  inFlight = false;
  banner: Banner | null = null;
  submittedCount = 0;
  runIteration = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly batchSize = 10,
  ) {}

  get current(): TaskView | null {
    return this.queue.length ? this.queue[0] : null;
  }

  get idle(): boolean {
    return this.queue.length === 0;
  }

  async refill(): Promise<number> {
    try {
      const response = await this.api.getTasks(this.batchSize, this.sessionId);
      this.runIteration = response.iteration;
      const known = new Set(this.queue.map((t) => t.task_id));
      for (const task of response.tasks) {
        if (!known.has(task.task_id)) this.queue.push(task);
      }
      if (this.queue.length === 0) {
        this.banner = {
          kind: "info",
          message: "No tasks available - pool exhausted or batch consumed. " +
            "Retrain to start the next iteration.",
          needsRefetch: false,
        };
      } else {
        this.banner = null;
      }
      return response.tasks.length;
    } catch (err) {
      this.banner = {
        kind: "error",
        message: offlineMessage(err),
        needsRefetch: false,
      };
      return 0;
    }
  }

  /** Submit the current task. Returns "ignored" while a request is in
   * flight, so a duplicate keypress never produces a second request. */
  async submit(
    label: LabelChoice,
    species?: string | null,
    ecotype?: string | null,
  ): Promise<SubmitOutcome> {
    const task = this.current;
    if (!task || this.inFlight) return { kind: "ignored" };
    this.inFlight = true;
    this.queue.shift(); // optimistic advance
    try {
      const { ack } = await this.api.submitLabel({
        task_id: task.task_id,
        label,
        species: label === "positive" ? species ?? null : null,
        ecotype: label === "positive" ? ecotype ?? null : null,
      });
      if (label === "skip") {
        this.queue.push(task); // service keeps it pending; show it last
        return { kind: "skipped", taskId: task.task_id };
      }
      this.submittedCount += 1;
      this.banner = null;
      return { kind: "accepted", taskId: ack.task_id };
    } catch (err) {
      if (err instanceof ApiError) {
        if (err.code === "task_expired" || err.code === "unknown_task") {
          // Lease lapsed under us: drop the task and prompt a re-fetch.
          this.banner = {
            kind: "error",
            message: `Task ${task.task_id} expired - fetch a fresh batch.`,
            needsRefetch: true,
          };
          return { kind: "rejected", taskId: task.task_id, code: err.code };
        }
        this.queue.unshift(task); // rollback, nothing silently dropped
        this.banner = {
          kind: "error",
          message: `Submission rejected (${err.code}): ${err.message}`,
          needsRefetch: false,
        };
        return { kind: "rejected", taskId: task.task_id, code: err.code };
      }
      this.queue.unshift(task); // rollback on network failure
      this.banner = {
        kind: "error",
        message: offlineMessage(err),
        needsRefetch: false,
      };
      return { kind: "offline", taskId: task.task_id };
    } finally {
      this.inFlight = false;
    }
  }
}

function offlineMessage(err: unknown): string {
  const detail = err instanceof Error ? err.message : String(err);
  return `Service unreachable: ${detail}`;
}
