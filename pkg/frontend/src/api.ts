/**
 * Typed client for the engine's HTTP API.
 *
 * Every request the console makes goes through this module, and every
 * method maps one-to-one onto a documented endpoint. The tests capture
 * traffic at the fetch boundary and assert nothing else is ever called.
 */

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface ExecutionResultDoc {
  attempt: number;
  status: string;
  stdout: string;
  stderr: string;
  duration_ms: number;
  artifacts_written: string[];
}

export interface CellDoc {
  id: number;
  kind: "text" | "code" | "finish";
  ordinal: number;
  purpose_or_spec: string;
  source: string;
  created_at: string;
  results: ExecutionResultDoc[];
}

export interface SpecDoc {
  task_description: string;
  metrics?: string;
  data_location?: string;
  general_instructions?: [string, string][];
}

export interface RunDocument {
  format_version: number;
  session_id: string;
  created_at: string;
  status: string;
  step_count: number;
  spec: SpecDoc;
  config: Record<string, unknown>;
  cells: CellDoc[];
  trace?: unknown[];
}

export interface CreateReply {
  session_id: string;
  status: string;
}

export interface StepReply {
  status: string;
  step_count: number;
  halted: boolean;
  cell: CellDoc | null;
}

export interface ImportReply {
  status: string;
  step_count: number;
  cell_count: number;
}

export interface AssetEntry {
  name: string;
  is_dir: boolean;
  size: number | null;
}

export interface AssetListing {
  path: string;
  entries: AssetEntry[];
}

export interface Diagnostics {
  ok: boolean;
  backends: {
    role: string;
    backend_id: string;
    reachable: boolean;
    auth_ok: boolean | null;
    latency_ms: number | null;
    detail: string;
  }[];
  sandbox: { runtime: string; available: boolean; detail: string };
  state_root: { path: string; writable: boolean };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function raiseForStatus(response: Response): Promise<Response> {
  if (response.ok) return response;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; statusText is the best we have
  }
  throw new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    return raiseForStatus(response);
  }

  private async postJson(path: string, body?: unknown): Promise<Response> {
    return this.request(path, {
      method: "POST",
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  async createSession(
    spec: SpecDoc,
    config?: Record<string, unknown>,
    sessionId?: string,
  ): Promise<CreateReply> {
    const body: Record<string, unknown> = { spec };
    if (config && Object.keys(config).length > 0) body.config = config;
    if (sessionId) body.session_id = sessionId;
    const response = await this.postJson("/sessions", body);
    return (await response.json()) as CreateReply;
  }

  async getSession(id: string): Promise<RunDocument> {
    const response = await this.request(`/sessions/${encodeURIComponent(id)}`);
    const body = (await response.json()) as { session: RunDocument };
    return body.session;
  }

  async step(id: string): Promise<StepReply> {
    const response = await this.postJson(`/sessions/${encodeURIComponent(id)}/step`);
    return (await response.json()) as StepReply;
  }

  async autorun(id: string): Promise<void> {
    await this.postJson(`/sessions/${encodeURIComponent(id)}/autorun`);
  }

  async reset(id: string): Promise<void> {
    await this.postJson(`/sessions/${encodeURIComponent(id)}/reset`);
  }

  async importRun(id: string, document: RunDocument): Promise<ImportReply> {
    const response = await this.postJson(
      `/sessions/${encodeURIComponent(id)}/import`,
      document,
    );
    return (await response.json()) as ImportReply;
  }

  async exportJson(id: string): Promise<RunDocument> {
    const response = await this.request(
      `/sessions/${encodeURIComponent(id)}/export?format=json`,
    );
    return (await response.json()) as RunDocument;
  }

  async exportText(id: string, format: "md" | "ipynb"): Promise<string> {
    const response = await this.request(
      `/sessions/${encodeURIComponent(id)}/export?format=${format}`,
    );
    return response.text();
  }

  async listAssets(id: string, path = ""): Promise<AssetListing> {
    const response = await this.request(this.assetPath(id, path));
    return (await response.json()) as AssetListing;
  }

  /** URL for direct downloads and <img> thumbnails. */
  assetUrl(id: string, path: string): string {
    return this.baseUrl + this.assetPath(id, path);
  }

  private assetPath(id: string, path: string): string {
    const clean = path.split("/").filter(Boolean).map(encodeURIComponent).join("/");
    return `/sessions/${encodeURIComponent(id)}/assets/${clean}`;
  }

  async diagnostics(): Promise<Diagnostics> {
    const response = await this.request("/diagnostics");
    return (await response.json()) as Diagnostics;
  }

  eventsUrl(id: string, lastEventId?: number): string {
    const base = `${this.baseUrl}/sessions/${encodeURIComponent(id)}/events`;
    return lastEventId === undefined ? base : `${base}?last_event_id=${lastEventId}`;
  }

  get rawFetch(): FetchLike {
    return this.fetchImpl;
  }
}
