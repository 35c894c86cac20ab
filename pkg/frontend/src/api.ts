/**
 * Typed client for the labeling service HTTP API.
 *
 * The fetch implementation is injectable so tests can run without a
 * server and the integration test can pass node's fetch explicitly.
 */

export interface TaskView {
  point_id: string;
  keyword: string;
  paragraph: string;
  page_url: string;
  round: number;
  char_offset: number;
  annotator: string;
  position: number;
  total: number;
}

export interface NextTaskResponse {
  done: boolean;
  task: TaskView | null;
  tally: Record<string, number>;
}

export interface Ack {
  ok: boolean;
  point_id: string;
  status: string;
}

export interface Progress {
  total: Record<string, number>;
  per_annotator: Record<string, Record<string, number>>;
  labels: Record<string, number>;
  rounds: Record<string, unknown>;
}

export interface Meta {
  api_version: string;
  initial_labels: string[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class LabelServiceClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { 'Content-Type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const payload = await response.json();
        if (payload && typeof payload.detail === 'string') detail = payload.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.request<Meta>('GET', '/api/meta');
  }

  nextTask(annotator: string): Promise<NextTaskResponse> {
    return this.request<NextTaskResponse>(
      'GET',
      `/api/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  submitLabel(
    pointId: string,
    annotator: string,
    label: string,
    flagKeyword: boolean,
  ): Promise<Ack> {
    return this.request<Ack>(
      'POST',
      `/api/tasks/${encodeURIComponent(pointId)}/label?annotator=${encodeURIComponent(annotator)}`,
      { label, flag_keyword: flagKeyword },
    );
  }

  skipTask(pointId: string, annotator: string): Promise<Ack> {
    return this.request<Ack>(
      'POST',
      `/api/tasks/${encodeURIComponent(pointId)}/skip?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  progress(): Promise<Progress> {
    return this.request<Progress>('GET', '/api/progress');
  }

  keywordFlags(): Promise<{ flags: Record<string, number> }> {
    return this.request<{ flags: Record<string, number> }>('GET', '/api/keywords/flags');
  }
}
