// Wire types mirroring the service API exactly. The UI renders these;
// it never derives category/intent/slot decisions itself.

export type Phase = "AwaitingQuery" | "Clarifying" | "Answered" | "Closed";
export type Language = "en" | "hi";

export interface CreateSessionResponse {
  session_id: string;
}

export interface TurnResponse {
  session_id: string;
  turn_index: number;
  reply_text: string;
  phase: Phase;
  pending_question: boolean;
  pending_slot: string | null;
  category: string | null;
  passage_id: string | null;
  events: string[];
  latency_ms: number;
}

export interface TranscriptTurn {
  author: "user" | "system";
  text: string;
  timestamp: number;
  annotations: Record<string, unknown>;
}

export interface FeedbackView {
  turn_index: number;
  rating: number;
  helpful: boolean;
  comment: string;
}

export interface SessionSnapshot {
  session_id: string;
  language: Language | null;
  modality: string;
  phase: Phase;
  category: string | null;
  crop_id: string | null;
  intent_id: string | null;
  slots: { filled: Record<string, string>; missing: string[] };
  pending_slot: string | null;
  clarification_turns: number;
  transcript: TranscriptTurn[];
  feedback: FeedbackView[];
}

export interface FeedbackRequest {
  turn_index: number;
  rating: number;
  helpful: boolean;
  comment: string;
}

export interface HealthResponse {
  status: string;
  index_loaded: boolean;
  backend_mode: string;
}
