// @vitest-environment happy-dom
import { describe, expect, it, vi } from 'vitest';

import { bindKeyboard, keyToAction } from '../src/keyboard.js';

describe('keyToAction', () => {
  it('maps 1-7 onto label indices in order', () => {
    for (let i = 1; i <= 7; i++) {
      expect(keyToAction(String(i))).toEqual({ kind: 'label', index: i - 1 });
    }
  });

  it('maps 0 to skip and f/F to flag', () => {
    expect(keyToAction('0')).toEqual({ kind: 'skip' });
    expect(keyToAction('f')).toEqual({ kind: 'flag' });
    expect(keyToAction('F')).toEqual({ kind: 'flag' });
  });

  it('ignores everything else', () => {
    for (const key of ['8', '9', 'a', 'Enter', ' ', 'Escape']) {
      expect(keyToAction(key)).toBeNull();
    }
  });
});

describe('bindKeyboard', () => {
  function press(key: string, target?: EventTarget) {
    const event = new KeyboardEvent('keydown', { key, bubbles: true, cancelable: true });
    (target ?? document).dispatchEvent(event);
    return event;
  }

  it('dispatches parsed actions and prevents default', () => {
    const handler = vi.fn();
    const unbind = bindKeyboard(document, handler);
    const event = press('3');
    expect(handler).toHaveBeenCalledWith({ kind: 'label', index: 2 });
    expect(event.defaultPrevented).toBe(true);
    unbind();
    press('4');
    expect(handler).toHaveBeenCalledTimes(1);
  });

  it('does not fire while typing in an input', () => {
    const handler = vi.fn();
    bindKeyboard(document, handler);
    const input = document.createElement('input');
    document.body.appendChild(input);
    press('1', input);
    expect(handler).not.toHaveBeenCalled();
  });

  it('ignores chords with modifier keys', () => {
    const handler = vi.fn();
    bindKeyboard(document, handler);
    document.dispatchEvent(new KeyboardEvent('keydown', { key: '1', ctrlKey: true }));
    expect(handler).not.toHaveBeenCalled();
  });
});
