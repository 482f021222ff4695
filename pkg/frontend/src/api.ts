/**
 * Typed client for the click-to-reveal experiment HTTP API.
 *
 * Five endpoints, all JSON except the newline-delimited export.  The client
 * carries no UI state: every method maps one request to one typed response
 * and turns non-2xx statuses into ApiError so callers can distinguish a
 * protocol rejection (bad choice label, out-of-range click) from a network
 * failure (fetch itself rejecting).
 */

export interface SessionSummary {
  session_id: string;
  participant_code: string;
  stimulus_set_id: string;
  seed: number;
  n_trials: number;
  block_boundaries: number[];
  block_count: number;
  created_at: string;
  cursor: number;
}

export interface TrialPayload {
  status: "trial";
  stimulus_id: string;
  option_pair: [string, string];
  block_index: number;
  cursor: number;
  n_trials: number;
  height: number;
  width: number;
  image_png_b64: string;
}

export interface DoneMarker {
  status: "done";
  completed: number;
}

export type TrialOrDone = TrialPayload | DoneMarker;

export interface ClickReply {
  x: number;
  y: number;
  patch_x0: number;
  patch_y0: number;
  radius: number;
  ms_since_trial_start: number;
  click_count: number;
  patch_png_b64: string;
}

export interface ChoiceReply {
  session_id: string;
  stimulus_id: string;
  true_label: string;
  false_label: string;
  choice: string;
  correct: boolean;
  duration_ms: number | null;
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ExperimentApi {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  async createSession(
    participantCode: string,
    stimulusSetId: string,
    seed?: number,
  ): Promise<SessionSummary> {
    const body: Record<string, unknown> = {
      participant_code: participantCode,
      stimulus_set_id: stimulusSetId,
    };
    if (seed !== undefined) body.seed = seed;
    const response = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson<SessionSummary>(response);
  }

  async nextTrial(sessionId: string): Promise<TrialOrDone> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/trial`);
    return asJson<TrialOrDone>(response);
  }

  async sendClick(
    sessionId: string,
    stimulusId: string,
    x: number,
    y: number,
    clientMs: number,
  ): Promise<ClickReply> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/clicks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ stimulus_id: stimulusId, x, y, client_ms: clientMs }),
    });
    return asJson<ClickReply>(response);
  }

  async submitChoice(
    sessionId: string,
    stimulusId: string,
    choice: string,
  ): Promise<ChoiceReply> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/choice`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ stimulus_id: stimulusId, choice }),
    });
    return asJson<ChoiceReply>(response);
  }

  async exportResults(sessionId: string): Promise<string> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/export`);
    if (!response.ok) {
      throw new ApiError(response.status, response.statusText);
    }
    return response.text();
  }
}
