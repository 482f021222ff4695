/**
 * Orchestrates the session flow: one ExperimentApi (or a stand-in with the
 * same shape) on one side, one TrialView on the other.
 *
 * Every public method resolves to a small outcome token instead of throwing,
 * so the DOM layer can stay a dumb renderer.  Outcomes:
 *   - "ignored":  the interaction was not legal in the current state and no
 *                 request was made (click after choice, wrong-label choice);
 *   - "rejected": the server refused the request with a 4xx and the trial
 *                 stays open (out-of-range click is a visual no-op);
 *   - "failed":   the network failed; view keeps its state and retry() will
 *                 repeat the interrupted step;
 *   - "ok":       the interaction took effect.
 */

import { ApiError } from "./api.js";
import type {
  ChoiceReply,
  ClickReply,
  ExperimentApi,
  SessionSummary,
  TrialOrDone,
} from "./api.js";
import { TrialView } from "./state.js";

export type Outcome = "ok" | "ignored" | "rejected" | "failed";

/** Structural subset of ExperimentApi the controller needs; lets tests and
 * the fixture server substitute an in-memory implementation. */
export interface ApiLike {
  createSession(
    participantCode: string,
    stimulusSetId: string,
    seed?: number,
  ): Promise<SessionSummary>;
  nextTrial(sessionId: string): Promise<TrialOrDone>;
  sendClick(
    sessionId: string,
    stimulusId: string,
    x: number,
    y: number,
    clientMs: number,
  ): Promise<ClickReply>;
  submitChoice(
    sessionId: string,
    stimulusId: string,
    choice: string,
  ): Promise<ChoiceReply>;
}

const _ = null as unknown as ExperimentApi satisfies ApiLike;

export class ExperimentController {
  readonly view: TrialView;
  session: SessionSummary | null = null;
  lastChoice: ChoiceReply | null = null;

  private readonly api: ApiLike;
  private readonly now: () => number;
  private trialShownAt = 0;
  private choiceInFlight: string | null = null;

  constructor(api: ApiLike, view?: TrialView, now: () => number = () => Date.now()) {
    this.api = api;
    this.view = view ?? new TrialView();
    this.now = now;
  }

  async start(
    participantCode: string,
    stimulusSetId: string,
    seed?: number,
  ): Promise<Outcome> {
    try {
      this.session = await this.api.createSession(participantCode, stimulusSetId, seed);
    } catch (error) {
      this.view.loadFailed(describe(error));
      return "failed";
    }
    return this.advance();
  }

  /** Fetch the next trial (or the done marker) into the view. */
  async advance(): Promise<Outcome> {
    if (this.session === null) return "ignored";
    this.view.beginLoad();
    let payload: TrialOrDone;
    try {
      payload = await this.api.nextTrial(this.session.session_id);
    } catch (error) {
      this.view.loadFailed(describe(error));
      return "failed";
    }
    this.view.receiveTrial(payload);
    if (this.view.phase === "trial") this.trialShownAt = this.now();
    return "ok";
  }

  beginTrialAfterBreak(): void {
    this.view.acknowledgeBreak();
    if (this.view.phase === "trial") this.trialShownAt = this.now();
  }

  /** Handle a click already mapped to image coordinates. */
  async clickAt(x: number, y: number): Promise<Outcome> {
    if (!this.view.canClick() || this.session === null || this.view.trial === null) {
      return "ignored";
    }
    const trial = this.view.trial;
    const clientMs = this.now() - this.trialShownAt;
    let reply: ClickReply;
    try {
      reply = await this.api.sendClick(
        this.session.session_id,
        trial.stimulus_id,
        x,
        y,
        clientMs,
      );
    } catch (error) {
      if (error instanceof ApiError && error.status < 500) {
        return "rejected";
      }
      this.view.noteError(describe(error));
      return "failed";
    }
    this.view.receivePatch(reply);
    return "ok";
  }

  async choose(label: string): Promise<Outcome> {
    if (!this.view.canChoose(label) || this.session === null || this.view.trial === null) {
      return "ignored";
    }
    this.view.lockChoice(label);
    return this.submitLockedChoice(label);
  }

  private async submitLockedChoice(label: string): Promise<Outcome> {
    if (this.session === null || this.view.trial === null) return "ignored";
    this.choiceInFlight = label;
    try {
      this.lastChoice = await this.api.submitChoice(
        this.session.session_id,
        this.view.trial.stimulus_id,
        label,
      );
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // The earlier attempt did reach the server; the trial is closed.
        this.choiceInFlight = null;
        return this.advance();
      }
      if (error instanceof ApiError && error.status < 500) {
        this.choiceInFlight = null;
        this.view.unlockChoice();
        this.view.noteError(error.detail);
        return "rejected";
      }
      this.view.noteError(describe(error));
      return "failed";
    }
    this.choiceInFlight = null;
    return this.advance();
  }

  /** Repeat whichever step a network failure interrupted. */
  async retry(): Promise<Outcome> {
    this.view.clearError();
    if (this.choiceInFlight !== null) {
      return this.submitLockedChoice(this.choiceInFlight);
    }
    if (this.view.phase === "load-error" || this.view.phase === "loading") {
      return this.advance();
    }
    return "ignored";
  }
}

function describe(error: unknown): string {
  if (error instanceof Error) return error.message;
  return String(error);
}
