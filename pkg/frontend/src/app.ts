/**
 * Single-task annotation flow: show one keyword-in-context task at a
 * time, submit with keyboard or buttons, advance only after the service
 * acknowledges. Nothing is ever displayed as saved before the 2xx.
 */

import { ApiError, LabelServiceClient, Meta, Progress, TaskView } from './api.js';
import { KeyAction, bindKeyboard } from './keyboard.js';
import { splitHighlight } from './highlight.js';

const LABEL_TITLES: Record<string, string> = {
  Manufacturer: 'Manufacturer of printers or equipment',
  Service: 'Personalized printing services',
  '3DPOwnProducts': 'Uses the technology in own production',
  ConsultingEducation: 'Consulting & education',
  Retail: 'Sells printers, material, spare parts',
  Information: 'Provides information',
  Others: 'Miscellaneous purposes',
};

export interface AppState {
  annotator: string;
  task: TaskView | null;
  labels: string[];
  flag: boolean;
  submitting: boolean;
  done: boolean;
  tally: Record<string, number>;
  error: string;
  offline: boolean;
}

export class App {
  state: AppState = {
    annotator: '',
    task: null,
    labels: [],
    flag: false,
    submitting: false,
    done: false,
    tally: {},
    error: '',
    offline: false,
  };
  progress: Progress | null = null;

  constructor(
    private root: Document,
    private client: LabelServiceClient,
  ) {}

  async start(annotator: string): Promise<void> {
    this.state.annotator = annotator;
    if (!this.state.labels.length) {
      const meta: Meta = await this.client.meta();
      this.state.labels = meta.initial_labels;
    }
    await this.advance();
  }

  async advance(): Promise<void> {
    try {
      const next = await this.client.nextTask(this.state.annotator);
      this.state.offline = false;
      this.state.task = next.task;
      this.state.done = next.done;
      this.state.tally = next.tally ?? {};
      this.state.flag = false;
      this.state.error = '';
      await this.refreshProgress();
    } catch (err) {
      this.handleFailure(err);
    }
    this.render();
  }

  async refreshProgress(): Promise<void> {
    this.progress = await this.client.progress();
  }

  handleAction(action: KeyAction): void {
    if (action.kind === 'flag') {
      this.state.flag = !this.state.flag;
      this.render();
      return;
    }
    if (action.kind === 'skip') {
      void this.submit(null);
      return;
    }
    const label = this.state.labels[action.index];
    if (label) void this.submit(label);
  }

  /** Submit a label (or skip with null); serialized, double-submit is a no-op. */
  async submit(label: string | null): Promise<void> {
    const task = this.state.task;
    if (!task || this.state.submitting) return;
    this.state.submitting = true;
    this.render();
    try {
      if (label === null) {
        await this.client.skipTask(task.point_id, this.state.annotator);
      } else {
        await this.client.submitLabel(task.point_id, this.state.annotator, label, this.state.flag);
      }
      this.state.submitting = false;
      await this.advance();
    } catch (err) {
      this.state.submitting = false;
      if (err instanceof ApiError && (err.status === 409 || err.status === 422)) {
        this.state.error = err.detail; // surfaced inline, task re-shown
        if (err.status === 409) {
          // conclusively done elsewhere: move on after surfacing it
          await this.advance();
          return;
        }
      } else {
        this.handleFailure(err);
      }
      this.render();
    }
  }

  private handleFailure(err: unknown): void {
    this.state.offline = true;
    this.state.error = err instanceof Error ? err.message : String(err);
  }

  // --- rendering ---------------------------------------------------------

  render(): void {
    const mount = this.root.getElementById('app');
    if (!mount) return;
    mount.innerHTML = '';
    if (this.state.offline) {
      mount.appendChild(this.renderOffline());
      return;
    }
    if (this.state.done) {
      mount.appendChild(this.renderDone());
      return;
    }
    if (this.state.task) {
      mount.appendChild(this.renderTask(this.state.task));
    }
  }

  private el(tag: string, className: string, text?: string): HTMLElement {
    const node = this.root.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private renderOffline(): HTMLElement {
    const box = this.el('div', 'banner banner-error');
    box.appendChild(this.el('p', '', `Service unreachable: ${this.state.error}`));
    const retry = this.el('button', 'btn', 'Retry') as HTMLButtonElement;
    retry.id = 'retry';
    retry.addEventListener('click', () => void this.advance());
    box.appendChild(retry);
    return box;
  }

  private renderDone(): HTMLElement {
    const box = this.el('section', 'done');
    box.appendChild(this.el('h2', '', 'All tasks done'));
    const list = this.el('ul', 'tally');
    for (const [label, count] of Object.entries(this.state.tally)) {
      const item = this.el('li', '', `${label}: ${count}`);
      item.dataset.label = label;
      list.appendChild(item);
    }
    box.appendChild(list);
    return box;
  }

  private renderProgressBar(): HTMLElement {
    const wrap = this.el('div', 'progress');
    const totals = this.progress?.total ?? { Pending: 0, Labeled: 0, Skipped: 0 };
    const doneCount = (totals.Labeled ?? 0) + (totals.Skipped ?? 0);
    const all = doneCount + (totals.Pending ?? 0);
    const bar = this.el('div', 'progress-bar');
    bar.id = 'progress-bar';
    bar.dataset.done = String(doneCount);
    bar.dataset.total = String(all);
    (bar as HTMLElement).style.width = all ? `${(100 * doneCount) / all}%` : '0%';
    wrap.appendChild(bar);
    wrap.appendChild(
      this.el('span', 'progress-text', `${doneCount} / ${all} across all annotators`),
    );
    return wrap;
  }

  private renderTask(task: TaskView): HTMLElement {
    const section = this.el('section', 'task');
    const header = this.el('div', 'task-header');
    header.appendChild(
      this.el('span', 'position', `Task ${task.position} of ${task.total} · Round ${task.round}`),
    );
    header.appendChild(this.el('span', 'annotator', this.state.annotator));
    section.appendChild(header);
    section.appendChild(this.renderProgressBar());

    if (this.state.error) {
      const banner = this.el('div', 'banner banner-error', this.state.error);
      banner.id = 'error';
      section.appendChild(banner);
    }

    const context = this.el('blockquote', 'paragraph');
    const parts = splitHighlight(task.paragraph, task.keyword, task.char_offset);
    context.appendChild(this.root.createTextNode(parts.before));
    if (parts.match) {
      const mark = this.el('mark', 'keyword-hit', parts.match);
      context.appendChild(mark);
    }
    context.appendChild(this.root.createTextNode(parts.after));
    section.appendChild(context);

    const meta = this.el('div', 'task-meta');
    meta.appendChild(this.el('span', 'keyword-chip', task.keyword));
    const link = this.el('a', 'page-link', task.page_url) as HTMLAnchorElement;
    link.href = task.page_url;
    link.target = '_blank';
    link.rel = 'noopener';
    meta.appendChild(link);
    section.appendChild(meta);

    const flag = this.el(
      'button',
      this.state.flag ? 'btn flag on' : 'btn flag',
      this.state.flag ? '⚑ keyword flagged [f]' : '⚐ flag keyword as imprecise [f]',
    ) as HTMLButtonElement;
    flag.id = 'flag';
    flag.addEventListener('click', () => this.handleAction({ kind: 'flag' }));
    section.appendChild(flag);

    const buttons = this.el('div', 'labels');
    this.state.labels.forEach((label, index) => {
      const btn = this.el('button', 'btn label', `${index + 1} · ${label}`) as HTMLButtonElement;
      btn.dataset.label = label;
      btn.title = LABEL_TITLES[label] ?? label;
      btn.disabled = this.state.submitting;
      btn.addEventListener('click', () => void this.submit(label));
      buttons.appendChild(btn);
    });
    const skip = this.el('button', 'btn skip', '0 · Skip') as HTMLButtonElement;
    skip.dataset.label = '__skip__';
    skip.disabled = this.state.submitting;
    skip.addEventListener('click', () => void this.submit(null));
    buttons.appendChild(skip);
    section.appendChild(buttons);
    return section;
  }
}

export function initApp(root: Document, client: LabelServiceClient): App {
  const app = new App(root, client);
  bindKeyboard(root, (action) => app.handleAction(action));

  const form = root.getElementById('annotator-form') as HTMLFormElement | null;
  const input = root.getElementById('annotator-input') as HTMLInputElement | null;
  if (form && input) {
    const stored = root.defaultView?.localStorage?.getItem('techradar.annotator');
    if (stored) input.value = stored;
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      const annotator = input.value.trim();
      if (!annotator) return;
      root.defaultView?.localStorage?.setItem('techradar.annotator', annotator);
      form.hidden = true;
      void app.start(annotator);
    });
  }
  return app;
}
