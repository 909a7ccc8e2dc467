/** Payload shapes of the curation-service HTTP API. */

export interface TaskView {
  task_id: string;
  sample_id: string;
  spectrogram_uri: string;
  audio_uri: string;
  model_score: number;
  strategy: string;
  issued_at: number;
  status: string;
}

export interface TasksResponse {
  run_id: string;
  iteration: number;
  tasks: TaskView[];
}

export interface Ack {
  task_id: string;
  status: string;
  seq?: number;
}

export interface HistoryRow {
  seed: number;
  iteration: number;
  strategy_used: string;
  n_labeled: number;
  n_pos_found: number;
  positivity_rate: number | null;
  val_spec_at_95sens: number | null;
  test_spec_at_95sens: number | null;
}

export interface StatsResponse {
  run_id: string;
  iteration: number;
  is_simulation: boolean;
  dataset_positivity: number | null;
  pool_counts: Record<string, number>;
  history: HistoryRow[];
}

export interface Vocab {
  species: string[];
  ecotypes: string[];
  call_codes: string[];
}

export type LabelChoice = "positive" | "negative" | "skip";

export interface LabelSubmission {
  task_id: string;
  label: LabelChoice;
  species?: string | null;
  ecotype?: string | null;
}
