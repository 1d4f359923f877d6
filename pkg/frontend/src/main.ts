import { TutorApiClient } from './api.js';
import { SessionController } from './controller.js';
import { render, type UiRefs } from './ui.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLElement>('error-banner');
  banner.hidden = false;
  banner.textContent = message;
}

function clearError(): void {
  el<HTMLElement>('error-banner').hidden = true;
}

function main(): void {
  const api = new TutorApiClient('');
  const controller = new SessionController(api);
  const refs: UiRefs = {
    messages: el('messages'),
    plan: el('plan'),
    banner: el('revert-banner'),
    status: el('status'),
  };
  controller.onView((view) => {
    render(view, refs);
    sessionStorage.setItem('tutorkit-session', view.sessionId);
  });

  const taskInput = el<HTMLTextAreaElement>('task-source');
  const startButton = el<HTMLButtonElement>('start');
  const messageInput = el<HTMLInputElement>('message');
  const sendButton = el<HTMLButtonElement>('send');
  const retryButton = el<HTMLButtonElement>('retry');

  const setBusy = (busy: boolean) => {
    sendButton.disabled = busy || !controller.active;
    retryButton.disabled = busy || !controller.active;
    startButton.disabled = busy;
  };

  startButton.addEventListener('click', async () => {
    clearError();
    setBusy(true);
    try {
      await controller.start(taskInput.value, undefined);
      el('setup').hidden = true;
      el('console').hidden = false;
    } catch (error) {
      showError(String(error)); // surfaced verbatim, no partial state
    } finally {
      setBusy(false);
    }
  });

  let lastMessage = '';
  sendButton.addEventListener('click', async () => {
    const content = messageInput.value.trim();
    if (!content || controller.busy) return;
    clearError();
    lastMessage = content;
    setBusy(true);
    try {
      await controller.send(content);
      messageInput.value = '';
    } catch (error) {
      showError(`Send failed: ${error}. Use retry; the turn will not run twice.`);
      retryButton.hidden = false;
    } finally {
      setBusy(false);
    }
  });

  retryButton.addEventListener('click', async () => {
    if (!lastMessage || controller.busy) return;
    clearError();
    setBusy(true);
    try {
      await controller.retry(lastMessage);
      retryButton.hidden = true;
      messageInput.value = '';
    } catch (error) {
      showError(`Retry failed: ${error}`);
    } finally {
      setBusy(false);
    }
  });

  // Reload: reattach to the stored session and rebuild the identical view.
  const stored = sessionStorage.getItem('tutorkit-session');
  if (stored) {
    controller
      .resume(stored)
      .then(() => {
        el('setup').hidden = true;
        el('console').hidden = false;
      })
      .catch(() => sessionStorage.removeItem('tutorkit-session'));
  }
  setBusy(false);
}

main();
