import type {
  CreateSessionResponse,
  FeedbackRequest,
  FeedbackView,
  HealthResponse,
  Language,
  SessionSnapshot,
  TurnResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ServiceClient {
  createSession(language: Language): Promise<CreateSessionResponse>;
  sendMessage(sessionId: string, text: string): Promise<TurnResponse>;
  getSession(sessionId: string): Promise<SessionSnapshot>;
  submitFeedback(sessionId: string, body: FeedbackRequest): Promise<FeedbackView>;
  health(): Promise<HealthResponse>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the service REST API. */
export class HttpClient implements ServiceClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const message =
        typeof (payload as { error?: string }).error === "string"
          ? (payload as { error: string }).error
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, message);
    }
    return payload as T;
  }

  createSession(language: Language): Promise<CreateSessionResponse> {
    return this.request("POST", "/v1/sessions", { modality: "text", language });
  }

  sendMessage(sessionId: string, text: string): Promise<TurnResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/messages`, { text });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  submitFeedback(sessionId: string, body: FeedbackRequest): Promise<FeedbackView> {
    return this.request("POST", `/v1/sessions/${sessionId}/feedback`, body);
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/v1/health");
  }
}
