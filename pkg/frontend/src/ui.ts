// DOM rendering: chat pane with verdict badges, plan sidebar, revert banner.

import type { SessionView } from './types.js';
import { activeCount } from './state.js';

const VERDICT_LABELS: Record<string, string> = {
  guided: 'guided',
  partial_leak: 'redacted',
  full_answer: 'blocked',
};

export interface UiRefs {
  messages: HTMLElement;
  plan: HTMLElement;
  banner: HTMLElement;
  status: HTMLElement;
}

export function render(view: SessionView, refs: UiRefs): void {
  if (!view.completed && activeCount(view) !== 1) {
    // Server state should make exactly one step active; surface loudly in dev.
    console.warn('plan sidebar expected exactly one active item', view.plan);
  }
  refs.messages.replaceChildren(
    ...view.messages.map((message) => {
      const row = document.createElement('div');
      row.className = `message ${message.role}`;
      const bubble = document.createElement('div');
      bubble.className = 'bubble';
      bubble.textContent = message.content;
      row.appendChild(bubble);
      if (message.role === 'assistant' && message.verdict) {
        const badge = document.createElement('span');
        badge.className = `badge badge-${message.verdict}`;
        badge.textContent = VERDICT_LABELS[message.verdict] ?? message.verdict;
        row.appendChild(badge);
      }
      if (message.reverted) {
        const mark = document.createElement('span');
        mark.className = 'badge badge-revert';
        mark.textContent = 'refocused';
        row.appendChild(mark);
      }
      return row;
    }),
  );
  refs.messages.scrollTop = refs.messages.scrollHeight;

  refs.plan.replaceChildren(
    ...view.plan.map((item) => {
      const li = document.createElement('li');
      li.className = `plan-item ${item.state}`;
      const marker = item.state === 'done' ? '✓' : item.state === 'active' ? '➤' : '•';
      li.textContent = `${marker} ${item.index}. ${item.description}`;
      return li;
    }),
  );

  refs.banner.hidden = view.revertCount === 0;
  if (view.revertCount > 0) {
    refs.banner.textContent =
      view.revertCount === 1
        ? 'The tutor backed up to an earlier step to keep guidance on track.'
        : `The tutor backed up ${view.revertCount} times to keep guidance on track.`;
  }

  refs.status.textContent = view.completed
    ? 'All steps done. Session complete.'
    : `Step ${view.plan.find((p) => p.state === 'active')?.index ?? '?'} of ${view.plan.length}`;
}
