import type {
  AnswerAck,
  ScoreResult,
  SessionConfig,
  SessionInfo,
  TrialPayload,
  Verdict,
} from "./types.js";

/** Error carrying the server's own message, surfaced verbatim in the UI. */
export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let detail = `${response.status} ${response.statusText}`;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(response.status, detail);
}

/** Thin typed client over the session endpoints. */
export class TuringApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch,
  ) {}

  async createSession(config: SessionConfig = {}): Promise<SessionInfo> {
    const response = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(config),
    });
    return parseOrThrow<SessionInfo>(response);
  }

  async nextTrial(sessionId: string): Promise<TrialPayload> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/trial`,
    );
    return parseOrThrow<TrialPayload>(response);
  }

  async submitAnswer(
    sessionId: string,
    trialIndex: number,
    verdict: Verdict,
  ): Promise<AnswerAck> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/answers`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ trial_index: trialIndex, verdict }),
      },
    );
    return parseOrThrow<AnswerAck>(response);
  }

  async score(sessionId: string): Promise<ScoreResult> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/score`,
    );
    return parseOrThrow<ScoreResult>(response);
  }

  imageUrl(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
