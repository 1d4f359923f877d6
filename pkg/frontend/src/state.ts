// SessionView is a pure function of the server transcript: refetching the
// state endpoint and rebuilding reproduces the view exactly.

import type {
  MessageView,
  PlanItemState,
  PlanItemView,
  SessionView,
  StateResponse,
} from './types.js';

function planItemState(
  index: number,
  current: number,
  completed: boolean,
  visited: Set<number>,
): PlanItemState {
  if (completed) return 'done';
  if (index === current) return 'active';
  if (index < current || visited.has(index)) return 'done';
  return 'pending';
}

export function buildView(state: StateResponse): SessionView {
  const visited = new Set(state.visited);
  const plan: PlanItemView[] = state.plan.map((item) => ({
    index: item.index,
    tag: item.tag,
    description: item.description,
    state: planItemState(item.index, state.current_subtask, state.completed, visited),
  }));

  const messages: MessageView[] = [];
  const revertedFlags: boolean[] = [];
  let revertCount = 0;
  let pendingRevert = false;
  for (const entry of state.transcript) {
    if (entry.role === 'system') {
      // Revert markers and backend errors are events, not messages; a revert
      // flags the next rendered assistant message as a re-anchor.
      if (entry.reverted) {
        revertCount += 1;
        pendingRevert = true;
      }
      continue;
    }
    if (entry.rejected) continue; // never render server-rejected turns
    messages.push({
      role: entry.role,
      content: entry.content,
      verdict: entry.verdict,
      reverted: entry.role === 'assistant' && (entry.reverted || pendingRevert),
    });
    if (entry.role === 'assistant' && pendingRevert) pendingRevert = false;
    revertedFlags.push(messages[messages.length - 1].reverted);
  }

  return {
    sessionId: state.session_id,
    messages,
    plan,
    revertedFlags,
    revertCount,
    completed: state.completed,
  };
}

/** Invariant check used by tests and render-time assertions: at most one
 *  plan item is active, and exactly one while the session is live. */
export function activeCount(view: SessionView): number {
  return view.plan.filter((item) => item.state === 'active').length;
}
