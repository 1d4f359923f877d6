// Session controller: one in-flight turn at a time, server state as the only
// source of truth. UI layers subscribe to view updates.

import { newIdempotencyKey, TutorApiClient } from './api.js';
import { buildView } from './state.js';
import type { SessionView } from './types.js';

export type ViewListener = (view: SessionView) => void;

export class SessionController {
  private sessionId: string | null = null;
  private inFlight = false;
  private listeners: ViewListener[] = [];
  private lastKey: string | null = null;

  constructor(private readonly api: TutorApiClient) {}

  onView(listener: ViewListener): void {
    this.listeners.push(listener);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  get active(): boolean {
    return this.sessionId !== null;
  }

  private async refresh(): Promise<SessionView> {
    if (!this.sessionId) throw new Error('no active session');
    const view = buildView(await this.api.fetchState(this.sessionId));
    for (const listener of this.listeners) listener(view);
    return view;
  }

  async start(taskSource: string, backend?: string): Promise<SessionView> {
    const started = await this.api.startSession(taskSource, backend);
    this.sessionId = started.session_id;
    return this.refresh();
  }

  /** Re-attach to an existing session (page reload). */
  async resume(sessionId: string): Promise<SessionView> {
    this.sessionId = sessionId;
    return this.refresh();
  }

  async send(content: string): Promise<SessionView> {
    if (!this.sessionId) throw new Error('no active session');
    if (this.inFlight) throw new Error('turn already in flight');
    this.inFlight = true;
    this.lastKey = newIdempotencyKey();
    try {
      await this.api.sendMessage(this.sessionId, content, this.lastKey);
      return await this.refresh();
    } finally {
      this.inFlight = false;
    }
  }

  /** Retry the previous send after a timeout; the idempotency key guarantees
   *  the server runs at most one turn for it. */
  async retry(content: string): Promise<SessionView> {
    if (!this.sessionId) throw new Error('no active session');
    if (!this.lastKey) return this.send(content);
    if (this.inFlight) throw new Error('turn already in flight');
    this.inFlight = true;
    try {
      await this.api.sendMessage(this.sessionId, content, this.lastKey);
      return await this.refresh();
    } finally {
      this.inFlight = false;
    }
  }
}
