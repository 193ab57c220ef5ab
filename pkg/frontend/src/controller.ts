// Orchestrates the wire client against the view-state machine. After every
// exchange the view is reconciled from GET /transcript, so what the UI shows
// is the server's transcript, not a client-side reconstruction.

import { ApiError, CopaClient } from "./api.js";
import {
  ViewSession,
  applyConnectionDown,
  applyModelAccepted,
  applyModelRejected,
  applySendFailure,
  applyTranscript,
  applyTurn,
  beginSend,
  canSend,
  newView,
} from "./state.js";

export class ChatController {
  view: ViewSession;

  constructor(
    private readonly client: CopaClient,
    sessionId: string,
    readonly speaker: string = "student",
  ) {
    this.view = newView(sessionId);
  }

  /** Create a session; a down service raises ApiError(ConnectionError). */
  static async start(
    client: CopaClient,
    taskId: string,
    speaker = "student",
  ): Promise<ChatController> {
    const sessionId = await client.createSession(taskId);
    return new ChatController(client, sessionId, speaker);
  }

  canSend(text: string): boolean {
    return canSend(this.view, text);
  }

  async send(text: string): Promise<void> {
    this.view = beginSend(this.view, this.speaker, text);
    try {
      const turn = await this.client.sendMessage(
        this.view.sessionId,
        this.speaker,
        text,
      );
      this.view = applyTurn(this.view, turn);
    } catch (err) {
      if (err instanceof ApiError && err.code === "ConnectionError") {
        this.view = applyConnectionDown(this.view, err.message);
        return;
      }
      // AgentUnavailable etc: the student message is retained server-side
      this.view = applySendFailure(this.view, describe(err));
    }
    await this.refresh();
  }

  /** Inline retry of the last failed turn. */
  async retry(): Promise<void> {
    const text = this.view.failedText;
    if (text === null) {
      return;
    }
    this.view = { ...this.view, phase: "idle", failedText: null, failedMessage: null };
    await this.send(text);
  }

  async uploadModel(model: unknown): Promise<void> {
    try {
      await this.client.uploadModel(this.view.sessionId, model);
    } catch (err) {
      this.view = applyModelRejected(this.view, describe(err));
      return;
    }
    const transcript = await this.client.transcript(this.view.sessionId);
    this.view = applyModelAccepted(this.view, transcript.model_revisions);
  }

  /** Pull the server transcript and mirror it into the view. */
  async refresh(): Promise<void> {
    try {
      const transcript = await this.client.transcript(this.view.sessionId);
      this.view = applyTranscript(this.view, transcript);
    } catch (err) {
      if (err instanceof ApiError && err.code === "ConnectionError") {
        this.view = applyConnectionDown(this.view, err.message);
      }
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  return String(err);
}
