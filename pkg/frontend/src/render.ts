// Pure render model: what the DOM will show, as plain data. main.ts turns
// this into elements; tests compare it against the wire transcript directly.

import type { ViewSession, Bubble, SourceInfo } from "./state.js";

export interface RenderedBubble {
  role: "student" | "agent";
  speaker: string;
  text: string;
  pending: boolean;
}

export function renderBubbles(view: ViewSession): RenderedBubble[] {
  const settled: RenderedBubble[] = view.messages.map((m: Bubble) => ({
    role: m.role,
    speaker: m.speaker,
    text: m.text,
    pending: false,
  }));
  if (view.pending && view.pendingText !== null) {
    settled.push({
      role: "student",
      speaker: view.pendingSpeaker,
      text: view.pendingText,
      pending: true,
    });
  }
  return settled;
}

/** The transcript's visible text content, one line per bubble. */
export function transcriptTextContent(view: ViewSession): string {
  return renderBubbles(view)
    .map((b) => `${b.speaker}: ${b.text}`)
    .join("\n");
}

/** Sources panel content; null means the panel stays hidden (no retrieval). */
export function renderSources(view: ViewSession): SourceInfo | null {
  return view.lastTrace;
}

export function modelChipLabel(view: ViewSession): string {
  return view.modelRevisions === 0
    ? "no model uploaded"
    : `model revision ${view.modelRevisions}`;
}
