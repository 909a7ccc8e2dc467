/** DOM wiring for the labeling console.
 *
 * Keyboard-first: p = positive, n = negative, s = skip, r = refetch batch.
 * The spectrogram is served pre-rendered by the engine; this file only
 * reflects API state into the DOM.
 */

import { ApiClient } from "./api.js";
import { buildDashboardCharts } from "./charts.js";
import { LabelSession } from "./state.js";
import type { Vocab } from "./types.js";

const STATS_POLL_MS = 4000;

export interface ConsoleElements {
  spectrogram: HTMLImageElement;
  audio: HTMLAudioElement;
  scoreBadge: HTMLElement;
  strategyBadge: HTMLElement;
  sampleLabel: HTMLElement;
  speciesSelect: HTMLSelectElement;
  ecotypeSelect: HTMLSelectElement;
  banner: HTMLElement;
  idlePanel: HTMLElement;
  taskPanel: HTMLElement;
  queueCount: HTMLElement;
  statsPanel: HTMLElement;
  runInfo: HTMLElement;
  retrainButton: HTMLButtonElement;
  refetchButton: HTMLButtonElement;
  positiveButton: HTMLButtonElement;
  negativeButton: HTMLButtonElement;
  skipButton: HTMLButtonElement;
}

export function lookupElements(doc: Document): ConsoleElements {
  const get = <T extends HTMLElement>(id: string): T => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    spectrogram: get<HTMLImageElement>("spectrogram"),
    audio: get<HTMLAudioElement>("audio"),
    scoreBadge: get("score-badge"),
    strategyBadge: get("strategy-badge"),
    sampleLabel: get("sample-label"),
    speciesSelect: get<HTMLSelectElement>("species"),
    ecotypeSelect: get<HTMLSelectElement>("ecotype"),
    banner: get("banner"),
    idlePanel: get("idle-panel"),
    taskPanel: get("task-panel"),
    queueCount: get("queue-count"),
    statsPanel: get("stats-panel"),
    runInfo: get("run-info"),
    retrainButton: get<HTMLButtonElement>("retrain"),
    refetchButton: get<HTMLButtonElement>("refetch"),
    positiveButton: get<HTMLButtonElement>("label-positive"),
    negativeButton: get<HTMLButtonElement>("label-negative"),
    skipButton: get<HTMLButtonElement>("label-skip"),
  };
}

function fillVocab(select: HTMLSelectElement, values: string[]): void {
  select.innerHTML = "";
  const blank = select.ownerDocument.createElement("option");
  blank.value = "";
  blank.textContent = "(unspecified)";
  select.appendChild(blank);
  for (const value of values) {
    const option = select.ownerDocument.createElement("option");
    option.value = value;
    option.textContent = value;
    select.appendChild(option);
  }
}

export class LabelConsole {
  readonly session: LabelSession;
  private statsTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly el: ConsoleElements,
    sessionId: string,
  ) {
    this.session = new LabelSession(api, sessionId);
  }

  async start(): Promise<void> {
    try {
      const { vocab } = await this.api.vocab();
      this.applyVocab(vocab);
    } catch {
      // Vocabulary is cosmetic; labeling works without it.
    }
    this.bindControls();
    await this.session.refill();
    this.renderTask();
    await this.refreshStats();
    this.statsTimer = setInterval(() => void this.refreshStats(), STATS_POLL_MS);
  }

  stop(): void {
    if (this.statsTimer) clearInterval(this.statsTimer);
  }

  applyVocab(vocab: Vocab): void {
    fillVocab(this.el.speciesSelect, vocab.species);
    fillVocab(this.el.ecotypeSelect, vocab.ecotypes);
  }

  bindControls(): void {
    this.el.positiveButton.addEventListener("click", () => void this.label("positive"));
    this.el.negativeButton.addEventListener("click", () => void this.label("negative"));
    this.el.skipButton.addEventListener("click", () => void this.label("skip"));
    this.el.refetchButton.addEventListener("click", () => void this.refetch());
    this.el.retrainButton.addEventListener("click", () => void this.retrain());
    this.el.spectrogram.ownerDocument.addEventListener("keydown", (event) => {
      const target = event.target as HTMLElement | null;
      if (target && ["SELECT", "INPUT", "TEXTAREA"].includes(target.tagName)) return;
      if (event.key === "p") void this.label("positive");
      else if (event.key === "n") void this.label("negative");
      else if (event.key === "s") void this.label("skip");
      else if (event.key === "r") void this.refetch();
    });
  }

  async label(choice: "positive" | "negative" | "skip"): Promise<void> {
    const outcome = await this.session.submit(
      choice,
      this.el.speciesSelect.value || null,
      this.el.ecotypeSelect.value || null,
    );
    if (outcome.kind === "ignored") return;
    if (this.session.idle && !this.session.banner?.needsRefetch) {
      await this.session.refill();
    }
    this.renderTask();
  }

  async refetch(): Promise<void> {
    await this.session.refill();
    this.renderTask();
  }

  async retrain(): Promise<void> {
    this.el.retrainButton.disabled = true;
    try {
      await this.api.retrain();
      await this.session.refill();
      await this.refreshStats();
    } catch (err) {
      this.session.banner = {
        kind: "error",
        message: err instanceof Error ? err.message : String(err),
        needsRefetch: false,
      };
    } finally {
      this.el.retrainButton.disabled = false;
      this.renderTask();
    }
  }

  renderTask(): void {
    const task = this.session.current;
    const banner = this.session.banner;
    this.el.banner.textContent = banner ? banner.message : "";
    this.el.banner.className = banner ? `banner ${banner.kind}` : "banner hidden";
    this.el.refetchButton.hidden = !(banner && banner.needsRefetch);
    this.el.queueCount.textContent = String(this.session.queue.length);
    if (!task) {
      this.el.taskPanel.hidden = true;
      this.el.idlePanel.hidden = false;
      this.el.retrainButton.disabled = false;
      return;
    }
    this.el.taskPanel.hidden = false;
    this.el.idlePanel.hidden = true;
    this.el.sampleLabel.textContent = task.sample_id;
    this.el.scoreBadge.textContent = `score ${task.model_score.toFixed(3)}`;
    this.el.strategyBadge.textContent = task.strategy;
    this.el.spectrogram.src = this.api.spectrogramUrl(task);
    this.el.audio.src = this.api.audioUrl(task);
  }

  async refreshStats(): Promise<void> {
    try {
      const stats = await this.api.stats();
      this.el.runInfo.textContent =
        `run ${stats.run_id} - iteration ${stats.iteration} - ` +
        `${stats.pool_counts.positive ?? 0} positives labeled`;
      this.el.statsPanel.innerHTML = buildDashboardCharts(stats);
    } catch {
      this.el.runInfo.textContent = "stats unavailable";
    }
  }
}

export function apiBaseFrom(location: Location, storage: Storage): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) {
    storage.setItem("pam_api_base", fromQuery);
    return fromQuery;
  }
  const stored = storage.getItem("pam_api_base");
  if (stored) return stored;
  return location.origin;
}

export function boot(doc: Document): LabelConsole {
  const base = apiBaseFrom(doc.defaultView!.location, doc.defaultView!.localStorage);
  const api = new ApiClient(base);
  const sessionId = `ui-${Math.random().toString(36).slice(2, 10)}`;
  const console_ = new LabelConsole(api, lookupElements(doc), sessionId);
  void console_.start();
  return console_;
}

declare global {
  interface Window {
    PAM_NO_AUTOBOOT?: boolean;
  }
}

if (typeof window !== "undefined" && !window.PAM_NO_AUTOBOOT) {
  window.addEventListener("DOMContentLoaded", () => boot(document));
}
