// Typed client for the copa wire API. All grounding stays server-side; this
// client only moves JSON.

export interface RetrievedChunk {
  chunk_id: string;
  score: number;
  text: string;
}

export interface Diagnosis {
  problem: string;
  diagnosis: string;
  recommendation: string;
  discrepancies: Array<{
    kind: string;
    path: string;
    expected?: unknown;
    found?: unknown;
  }>;
}

export interface AgentTurn {
  reply_text: string;
  retrieved: RetrievedChunk;
  diagnosis: Diagnosis;
  trace_id: string;
}

export interface TranscriptMessage {
  role: "student" | "agent" | "system";
  speaker: string;
  text: string;
  ts: number;
}

export interface Trace {
  trace_id: string;
  message_text: string;
  diagnosis: Diagnosis;
  retrieved: RetrievedChunk;
  reply_prompt: string;
  reply_text: string;
  ts: number;
}

export interface Transcript {
  session_id: string;
  task_id: string;
  kb_id: string;
  model_revisions: number;
  messages: TranscriptMessage[];
  traces: Trace[];
}

export interface Health {
  status: string;
  kb_id: string;
  providers: { llm: string; embedder: string };
}

/** Error carrying the server's {error, message} body (or a transport code). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

async function toApiError(res: Response): Promise<ApiError> {
  let code = `HTTP${res.status}`;
  let message = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") {
      code = body.error;
      message = typeof body.message === "string" ? body.message : message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, code, message);
}

export class CopaClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, "ConnectionError", String(err));
    }
    if (!res.ok) {
      throw await toApiError(res);
    }
    return res;
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async health(): Promise<Health> {
    return (await this.request("/healthz")).json();
  }

  async createSession(taskId: string): Promise<string> {
    const res = await this.post("/sessions", { task_id: taskId });
    const body = await res.json();
    return body.session_id as string;
  }

  async uploadModel(sessionId: string, model: unknown): Promise<void> {
    await this.post(`/sessions/${sessionId}/model`, { model });
  }

  async sendMessage(
    sessionId: string,
    speaker: string,
    text: string,
  ): Promise<AgentTurn> {
    const res = await this.post(`/sessions/${sessionId}/messages`, {
      speaker,
      text,
    });
    return res.json();
  }

  async transcript(sessionId: string): Promise<Transcript> {
    return (await this.request(`/sessions/${sessionId}/transcript`)).json();
  }
}
