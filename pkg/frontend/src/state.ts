// Pure view-state machine: {idle, pending, error} with one in-flight message
// per session view. Every transition returns a new state object, which keeps
// the machine trivially testable without a DOM.

import type { AgentTurn, Transcript } from "./api.js";

export type Phase = "idle" | "pending" | "error";

export interface Bubble {
  role: "student" | "agent";
  speaker: string;
  text: string;
  ts: number;
}

export interface SourceInfo {
  chunkId: string;
  chunkText: string;
  score: number;
  diagnosisSummary: string;
}

export interface ViewSession {
  sessionId: string;
  phase: Phase;
  /** true only between send and reply */
  pending: boolean;
  /** the optimistic student bubble shown while pending */
  pendingText: string | null;
  pendingSpeaker: string;
  messages: Bubble[];
  lastTrace: SourceInfo | null;
  /** failed send kept for the inline retry affordance */
  failedText: string | null;
  failedMessage: string | null;
  modelRevisions: number;
  modelError: string | null;
  banner: string | null;
}

export function newView(sessionId: string): ViewSession {
  return {
    sessionId,
    phase: "idle",
    pending: false,
    pendingText: null,
    pendingSpeaker: "student",
    messages: [],
    lastTrace: null,
    failedText: null,
    failedMessage: null,
    modelRevisions: 0,
    modelError: null,
    banner: null,
  };
}

/** Send is allowed only for non-empty input while no message is in flight. */
export function canSend(view: ViewSession, text: string): boolean {
  return !view.pending && text.trim().length > 0;
}

export function beginSend(
  view: ViewSession,
  speaker: string,
  text: string,
): ViewSession {
  if (!canSend(view, text)) {
    throw new Error("send not allowed in this state");
  }
  return {
    ...view,
    phase: "pending",
    pending: true,
    pendingText: text,
    pendingSpeaker: speaker,
    failedText: null,
    failedMessage: null,
    banner: null,
  };
}

function summarizeDiagnosis(turn: AgentTurn): string {
  const d = turn.diagnosis;
  return `${d.problem} ${d.diagnosis}`.trim();
}

/** The reply arrived; the sources panel reflects the turn's retrieval. */
export function applyTurn(view: ViewSession, turn: AgentTurn): ViewSession {
  return {
    ...view,
    phase: "idle",
    pending: false,
    pendingText: null,
    lastTrace: turn.retrieved
      ? {
          chunkId: turn.retrieved.chunk_id,
          chunkText: turn.retrieved.text,
          score: turn.retrieved.score,
          diagnosisSummary: summarizeDiagnosis(turn),
        }
      : null,
  };
}

/**
 * Reconcile bubbles from the server transcript: the server is the source of
 * truth for message text/order, so the rendered transcript stays byte-equal
 * to GET /transcript content. System events (model updates) feed the
 * revision chip, not bubbles.
 */
export function applyTranscript(
  view: ViewSession,
  transcript: Transcript,
): ViewSession {
  const messages: Bubble[] = transcript.messages
    .filter((m) => m.role === "student" || m.role === "agent")
    .map((m) => ({
      role: m.role as "student" | "agent",
      speaker: m.speaker,
      text: m.text,
      ts: m.ts,
    }));
  return { ...view, messages, modelRevisions: transcript.model_revisions };
}

/** Agent pipeline failed: keep the text for an inline retry on that turn. */
export function applySendFailure(
  view: ViewSession,
  message: string,
): ViewSession {
  return {
    ...view,
    phase: "error",
    pending: false,
    failedText: view.pendingText,
    pendingText: null,
    failedMessage: message,
  };
}

export function applyModelAccepted(
  view: ViewSession,
  revisions: number,
): ViewSession {
  return { ...view, modelRevisions: revisions, modelError: null };
}

export function applyModelRejected(
  view: ViewSession,
  message: string,
): ViewSession {
  return { ...view, modelError: message };
}

export function applyConnectionDown(
  view: ViewSession,
  message: string,
): ViewSession {
  return { ...view, phase: "error", pending: false, banner: message };
}

export function clearBanner(view: ViewSession): ViewSession {
  return { ...view, banner: null, phase: view.pending ? "pending" : "idle" };
}
