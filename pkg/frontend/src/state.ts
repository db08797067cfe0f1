import { ApiError, type ServiceClient } from "./api.js";
import type { Language, Phase, SessionSnapshot } from "./types.js";

// View model. All dialogue decisions (category, intent, slots, phases)
// come from the server; this layer only mirrors them and tracks UI
// concerns: the in-flight flag, optimistic user turns, and failures.

export interface ChatMessage {
  author: "user" | "system";
  text: string;
  /** question = clarification turn; answer = final answer; notice = UI info */
  kind: "question" | "answer" | "notice" | "plain";
  turnIndex?: number;
  failed?: boolean;
  feedbackGiven?: boolean;
}

export interface SlotRow {
  slotId: string;
  displayName: string;
  filled: boolean;
  value: string | null;
}

export interface ChatViewState {
  sessionId: string | null;
  messages: ChatMessage[];
  phase: Phase | null;
  slotPanel: SlotRow[];
  language: Language;
  pending: boolean;
  errorBanner: string | null;
  closedNotice: boolean;
  lastFailedText: string | null;
}

export function initialState(language: Language = "en"): ChatViewState {
  return {
    sessionId: null,
    messages: [],
    phase: null,
    slotPanel: [],
    language,
    pending: false,
    errorBanner: null,
    closedNotice: false,
    lastFailedText: null,
  };
}

/** Humanize a slot id for the panel (presentation only). */
export function slotLabel(slotId: string): string {
  return slotId
    .split("_")
    .map((w) => (w ? w[0]!.toUpperCase() + w.slice(1) : w))
    .join(" ");
}

export function slotPanelFromSnapshot(snapshot: SessionSnapshot): SlotRow[] {
  const rows: SlotRow[] = [];
  for (const [slotId, value] of Object.entries(snapshot.slots.filled)) {
    rows.push({ slotId, displayName: slotLabel(slotId), filled: true, value });
  }
  for (const slotId of snapshot.slots.missing) {
    rows.push({ slotId, displayName: slotLabel(slotId), filled: false, value: null });
  }
  return rows;
}

export async function startSession(
  client: ServiceClient,
  language: Language,
): Promise<ChatViewState> {
  const state = initialState(language);
  try {
    const created = await client.createSession(language);
    state.sessionId = created.session_id;
    state.phase = "AwaitingQuery";
  } catch (error) {
    state.errorBanner =
      error instanceof Error ? error.message : "could not reach the service";
  }
  return state;
}

export async function sendMessage(
  client: ServiceClient,
  state: ChatViewState,
  text: string,
): Promise<ChatViewState> {
  const trimmed = text.trim();
  if (!trimmed || state.pending || !state.sessionId || state.closedNotice) {
    return state;
  }
  const next: ChatViewState = {
    ...state,
    pending: true,
    errorBanner: null,
    lastFailedText: null,
    messages: [...state.messages, { author: "user", text: trimmed, kind: "plain" }],
  };
  try {
    const turn = await client.sendMessage(state.sessionId, trimmed);
    const snapshot = await client.getSession(state.sessionId);
    next.messages = [
      ...next.messages,
      {
        author: "system",
        text: turn.reply_text,
        kind: turn.pending_question ? "question" : "answer",
        turnIndex: turn.turn_index,
      },
    ];
    next.phase = turn.phase;
    next.slotPanel = slotPanelFromSnapshot(snapshot);
  } catch (error) {
    const lastUser = next.messages[next.messages.length - 1];
    if (error instanceof ApiError && error.status === 409) {
      next.closedNotice = true;
      next.messages = [
        ...next.messages.slice(0, -1),
        { author: "system", text: "This session is closed. Start a new one.", kind: "notice" },
      ];
    } else {
      if (lastUser) lastUser.failed = true;
      next.lastFailedText = trimmed;
      next.errorBanner =
        error instanceof Error ? error.message : "message failed to send";
    }
  }
  next.pending = false;
  return next;
}

export async function retryLastFailed(
  client: ServiceClient,
  state: ChatViewState,
): Promise<ChatViewState> {
  if (!state.lastFailedText) return state;
  const withoutFailed: ChatViewState = {
    ...state,
    messages: state.messages.filter((m) => !m.failed),
  };
  return sendMessage(client, withoutFailed, state.lastFailedText);
}

export async function submitFeedback(
  client: ServiceClient,
  state: ChatViewState,
  turnIndex: number,
  rating: number,
  helpful: boolean,
  comment = "",
): Promise<ChatViewState> {
  if (!state.sessionId) return state;
  try {
    await client.submitFeedback(state.sessionId, {
      turn_index: turnIndex,
      rating,
      helpful,
      comment,
    });
  } catch (error) {
    return {
      ...state,
      errorBanner:
        error instanceof Error ? error.message : "feedback submission failed",
    };
  }
  return {
    ...state,
    errorBanner: null,
    messages: state.messages.map((m) =>
      m.turnIndex === turnIndex && m.author === "system"
        ? { ...m, feedbackGiven: true }
        : m,
    ),
  };
}

/** Count of filled slots; used by tests to assert monotonic growth. */
export function filledCount(state: ChatViewState): number {
  return state.slotPanel.filter((r) => r.filled).length;
}
