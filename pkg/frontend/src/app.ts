import { ApiError, TuringApi } from "./api.js";
import type { ScoreResult, SessionConfig, TrialPayload, Verdict } from "./types.js";

export type AppState =
  | "idle"
  | "loading"
  | "awaiting"
  | "submitting"
  | "complete"
  | "error";

/**
 * Drives one rater session: fetch trial, show slice, take a forced
 * real/synthetic verdict, repeat; then reveal accuracy and the confusion
 * table. State only advances on server acknowledgements, and the verdict
 * buttons stay disabled while a submission is in flight.
 */
export class TestApp {
  state: AppState = "idle";
  sessionId: string | null = null;
  trial: TrialPayload | null = null;
  score: ScoreResult | null = null;

  constructor(
    private api: TuringApi,
    private doc: Document,
  ) {}

  private el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  bind(): void {
    this.el("start-button").addEventListener("click", () => {
      void this.start(this.readConfig());
    });
    this.el("verdict-real").addEventListener("click", () => {
      void this.answer("real");
    });
    this.el("verdict-synthetic").addEventListener("click", () => {
      void this.answer("synthetic");
    });
    this.el("retry-button").addEventListener("click", () => {
      void this.resume();
    });
    this.doc.addEventListener("keydown", (event) => {
      const key = (event as KeyboardEvent).key.toLowerCase();
      if (key === "r") void this.answer("real");
      if (key === "s") void this.answer("synthetic");
    });
    this.render();
  }

  private readConfig(): SessionConfig {
    const input = this.el<HTMLInputElement>("n-trials");
    const n = parseInt(input.value, 10);
    return Number.isFinite(n) && n >= 1 ? { n_trials: n } : {};
  }

  async start(config: SessionConfig = {}): Promise<void> {
    if (this.state === "loading" || this.state === "submitting") return;
    this.state = "loading";
    this.render();
    try {
      const info = await this.api.createSession(config);
      this.sessionId = info.session_id;
      await this.loadTrial();
    } catch (error) {
      this.fail(error);
    }
  }

  /** Fetch the first unanswered trial, or the score once complete. */
  async resume(): Promise<void> {
    if (!this.sessionId) return;
    this.state = "loading";
    this.render();
    try {
      await this.loadTrial();
    } catch (error) {
      this.fail(error);
    }
  }

  private async loadTrial(): Promise<void> {
    if (!this.sessionId) return;
    try {
      this.trial = await this.api.nextTrial(this.sessionId);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.finish();
        return;
      }
      throw error;
    }
    this.state = "awaiting";
    this.render();
  }

  async answer(verdict: Verdict): Promise<void> {
    // no double submission: only one in-flight answer, only when awaiting
    if (this.state !== "awaiting" || !this.sessionId || !this.trial) return;
    const trialIndex = this.trial.trial_index;
    this.state = "submitting";
    this.render();
    try {
      const ack = await this.api.submitAnswer(this.sessionId, trialIndex, verdict);
      if (ack.state === "complete") {
        await this.finish();
      } else {
        await this.loadTrial();
      }
    } catch (error) {
      this.fail(error);
    }
  }

  private async finish(): Promise<void> {
    if (!this.sessionId) return;
    this.score = await this.api.score(this.sessionId);
    this.trial = null;
    this.state = "complete";
    this.render();
  }

  private fail(error: unknown): void {
    this.state = "error";
    const message =
      error instanceof Error ? error.message : "request failed";
    this.el("error-message").textContent = message;
    this.render();
  }

  render(): void {
    const show = (id: string, visible: boolean) => {
      this.el(id).hidden = !visible;
    };
    show("start-panel", this.state === "idle");
    show("test-panel", this.state === "awaiting" || this.state === "submitting"
      || this.state === "loading");
    show("error-panel", this.state === "error");
    show("result-panel", this.state === "complete");

    const busy = this.state !== "awaiting";
    this.el<HTMLButtonElement>("verdict-real").disabled = busy;
    this.el<HTMLButtonElement>("verdict-synthetic").disabled = busy;

    if (this.trial) {
      this.el<HTMLImageElement>("slice-image").src =
        this.api.imageUrl(this.trial.image_url);
      this.el("progress").textContent =
        `Trial ${this.trial.trial_index + 1} of ${this.trial.n_trials}`;
    }
    if (this.score) {
      const pct = (100 * this.score.accuracy).toFixed(0);
      this.el("accuracy").textContent =
        `Accuracy ${pct}% (${this.score.correct}/${this.score.n_trials})`;
      const c = this.score.confusion;
      this.el("cell-real-real").textContent = String(c.real_real);
      this.el("cell-real-synthetic").textContent = String(c.real_synthetic);
      this.el("cell-synthetic-real").textContent = String(c.synthetic_real);
      this.el("cell-synthetic-synthetic").textContent =
        String(c.synthetic_synthetic);
    }
  }
}
