export type Verdict = "real" | "synthetic";

export interface SessionInfo {
  session_id: string;
  n_trials: number;
  state: "active" | "complete";
}

export interface TrialPayload {
  session_id: string;
  trial_index: number;
  n_trials: number;
  answered: number;
  image_url: string;
  level_hu: number;
  width_hu: number;
}

export interface AnswerAck {
  accepted: boolean;
  answered: number;
  n_trials: number;
  state: "active" | "complete";
}

export interface Confusion {
  real_real: number;
  real_synthetic: number;
  synthetic_real: number;
  synthetic_synthetic: number;
}

export interface ScoreResult {
  session_id: string;
  state: string;
  answered: number;
  n_trials: number;
  correct: number;
  accuracy: number;
  confusion: Confusion;
  class_rates?: { real: number | null; synthetic: number | null };
  trials: Array<{
    trial_index: number;
    truth: Verdict;
    verdict: Verdict;
    correct: boolean;
  }>;
}

export interface SessionConfig {
  n_trials?: number;
  ratio?: number;
  seed?: number;
}
