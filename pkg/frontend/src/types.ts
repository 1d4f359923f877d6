// Wire types for the tutorkit session API.

export type Verdict = 'guided' | 'partial_leak' | 'full_answer';

export interface PlanItemWire {
  index: number;
  tag: string;
  description: string;
  depends_on: number[];
  span: number[];
}

export interface SessionResponse {
  session_id: string;
  plan: PlanItemWire[];
}

export interface MessageResponse {
  reply: string;
  verdict: Verdict | null;
  current_subtask: number;
  reverted: boolean;
  completed: boolean;
  error: boolean;
}

export interface TranscriptEntryWire {
  role: 'user' | 'assistant' | 'system';
  content: string;
  verdict: Verdict | null;
  rejected: boolean;
  reverted: boolean;
  error: boolean;
}

export interface StateResponse {
  session_id: string;
  plan: PlanItemWire[];
  current_subtask: number;
  completed: boolean;
  visited: number[];
  consecutive_rejections: number;
  checkpoint_depth: number;
  transcript: TranscriptEntryWire[];
}

// View model rendered by the console.

export type PlanItemState = 'pending' | 'active' | 'done';

export interface PlanItemView {
  index: number;
  tag: string;
  description: string;
  state: PlanItemState;
}

export interface MessageView {
  role: 'user' | 'assistant';
  content: string;
  verdict: Verdict | null;
  reverted: boolean;
}

export interface SessionView {
  sessionId: string;
  messages: MessageView[];
  plan: PlanItemView[];
  revertedFlags: boolean[]; // one flag per rendered message
  revertCount: number;
  completed: boolean;
}
