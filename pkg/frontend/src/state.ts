/**
 * Trial-presentation state machine, independent of the DOM.
 *
 * The view owns everything the renderer needs to draw one moment of the
 * experiment: which phase the screen is in, the active trial, the patches
 * revealed so far, and any error awaiting a retry.  All transitions are
 * synchronous; the controller performs the HTTP calls and feeds results in.
 *
 * Rules the transitions enforce:
 *   - a freshly activated trial starts with zero patches and a zero counter,
 *     and the option pair is available before any click happens;
 *   - patches accumulate in arrival order, the click counter following the
 *     server's authoritative count;
 *   - once a choice is locked in, further clicks and choices are ignored;
 *   - a trial whose block index exceeds the previous trial's enters a break
 *     screen first and only activates on explicit acknowledgement;
 *   - network failures set an error message without touching the patches,
 *     option pair, or counters, so a retry resumes exactly where it left off.
 */

import type { ClickReply, DoneMarker, TrialOrDone, TrialPayload } from "./api.js";

export type Phase = "idle" | "loading" | "load-error" | "trial" | "break" | "done";

export interface PatchPlacement {
  x0: number;
  y0: number;
  radius: number;
  clickX: number;
  clickY: number;
  pngB64: string;
}

export class TrialView {
  phase: Phase = "idle";
  trial: TrialPayload | null = null;
  patches: PatchPlacement[] = [];
  clickCount = 0;
  /** Label locked in by the participant; null while still deciding. */
  pendingChoice: string | null = null;
  completed: number | null = null;
  lastError: string | null = null;

  private pendingTrial: TrialPayload | null = null;
  private lastBlockIndex = -1;

  beginLoad(): void {
    this.phase = "loading";
    this.lastError = null;
  }

  loadFailed(message: string): void {
    this.phase = "load-error";
    this.lastError = message;
  }

  receiveTrial(payload: TrialOrDone): void {
    if (payload.status === "done") {
      this.trial = null;
      this.completed = (payload as DoneMarker).completed;
      this.phase = "done";
      return;
    }
    if (this.lastBlockIndex >= 0 && payload.block_index > this.lastBlockIndex) {
      this.pendingTrial = payload;
      this.phase = "break";
      return;
    }
    this.activate(payload);
  }

  acknowledgeBreak(): void {
    if (this.phase !== "break" || this.pendingTrial === null) return;
    const next = this.pendingTrial;
    this.pendingTrial = null;
    this.activate(next);
  }

  private activate(payload: TrialPayload): void {
    this.trial = payload;
    this.patches = [];
    this.clickCount = 0;
    this.pendingChoice = null;
    this.lastError = null;
    this.lastBlockIndex = payload.block_index;
    this.phase = "trial";
  }

  canClick(): boolean {
    return this.phase === "trial" && this.pendingChoice === null;
  }

  receivePatch(reply: ClickReply): void {
    if (this.phase !== "trial") return;
    this.patches.push({
      x0: reply.patch_x0,
      y0: reply.patch_y0,
      radius: reply.radius,
      clickX: reply.x,
      clickY: reply.y,
      pngB64: reply.patch_png_b64,
    });
    // Replies to near-simultaneous clicks can arrive out of order; the
    // server's count is authoritative, so never let it run backwards.
    this.clickCount = Math.max(this.clickCount, reply.click_count);
  }

  canChoose(label: string): boolean {
    return (
      this.phase === "trial" &&
      this.pendingChoice === null &&
      this.trial !== null &&
      this.trial.option_pair.includes(label)
    );
  }

  lockChoice(label: string): void {
    if (!this.canChoose(label)) {
      throw new Error(`cannot choose ${JSON.stringify(label)} now`);
    }
    this.pendingChoice = label;
  }

  /** Undo a locked choice the server rejected, reopening the trial. */
  unlockChoice(): void {
    this.pendingChoice = null;
  }

  noteError(message: string): void {
    this.lastError = message;
  }

  clearError(): void {
    this.lastError = null;
  }
}
