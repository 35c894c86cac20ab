/**
 * Keyboard-first labeling: 1-7 pick the seven initial labels in their
 * documented order, 0 skips, f toggles the keyword-imprecise flag.
 */

export type KeyAction =
  | { kind: 'label'; index: number }
  | { kind: 'skip' }
  | { kind: 'flag' };

export function keyToAction(key: string): KeyAction | null {
  if (key >= '1' && key <= '7') {
    return { kind: 'label', index: key.charCodeAt(0) - '1'.charCodeAt(0) };
  }
  if (key === '0') return { kind: 'skip' };
  if (key === 'f' || key === 'F') return { kind: 'flag' };
  return null;
}

function isTypingTarget(target: EventTarget | null): boolean {
  if (!target || typeof (target as HTMLElement).tagName !== 'string') return false;
  const tag = (target as HTMLElement).tagName;
  return tag === 'INPUT' || tag === 'TEXTAREA' || (target as HTMLElement).isContentEditable === true;
}

/** Attach the shortcut handler; returns the unbind function. */
export function bindKeyboard(
  target: { addEventListener: Function; removeEventListener: Function },
  handler: (action: KeyAction) => void,
): () => void {
  const listener = (event: KeyboardEvent) => {
    if (event.ctrlKey || event.metaKey || event.altKey) return;
    if (isTypingTarget(event.target)) return;
    const action = keyToAction(event.key);
    if (action) {
      event.preventDefault();
      handler(action);
    }
  };
  target.addEventListener('keydown', listener);
  return () => target.removeEventListener('keydown', listener);
}
