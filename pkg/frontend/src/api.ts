// Thin typed client for the tutorkit session API. The console holds no
// session logic of its own: it only posts turns and re-renders server state.

import type { MessageResponse, SessionResponse, StateResponse } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && typeof body.detail === 'string') detail = body.detail;
    else if (body) detail = JSON.stringify(body);
  } catch {
    // keep statusText
  }
  return new ApiError(response.status, detail);
}

export class TutorApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  healthz(): Promise<{ status: string }> {
    return this.get('/healthz');
  }

  startSession(taskSource: string, backend?: string): Promise<SessionResponse> {
    const body: Record<string, unknown> = { task_source: taskSource };
    if (backend) body.backend = backend;
    return this.post('/session', body);
  }

  /** Sends one turn. Retrying with the same idempotency key is safe: the
   *  server replays the original response instead of running a new turn. */
  sendMessage(
    sessionId: string,
    content: string,
    idempotencyKey: string,
  ): Promise<MessageResponse> {
    return this.post(`/session/${sessionId}/message`, {
      content,
      idempotency_key: idempotencyKey,
    });
  }

  fetchState(sessionId: string): Promise<StateResponse> {
    return this.get(`/session/${sessionId}/state`);
  }
}

export function newIdempotencyKey(): string {
  return `${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}
