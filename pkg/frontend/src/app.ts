/**
 * The operator console: three panels wired to the engine's HTTP API.
 *
 * Left: configuration knobs for a new session. Middle: project summary,
 * run controls, exports, assets, activity log. Right: the generated
 * solution as a stream of cells.
 *
 * All UI operations are serialized on one promise chain; tests (and
 * impatient users) cannot interleave two mutating calls.
 */

import { ApiClient, type RunDocument, type SpecDoc } from "./api.js";
import { EventStream } from "./sse.js";
import {
  applyEvent,
  initialState,
  isTerminal,
  loadDocument,
  type ConsoleState,
} from "./store.js";
import {
  h,
  renderActivity,
  renderAssets,
  renderCells,
  renderSummary,
  syncControls,
  type AssetView,
} from "./view.js";

export interface AppOptions {
  /** Stream reconnect delay; tests shrink it. */
  retryMs?: number;
}

interface Elements {
  taskDescription: HTMLTextAreaElement;
  metrics: HTMLInputElement;
  dataLocation: HTMLInputElement;
  instructions: HTMLTextAreaElement;
  maxSteps: HTMLInputElement;
  maxCodeRetries: HTMLInputElement;
  historyCharLimit: HTMLInputElement;
  headTailLines: HTMLInputElement;
  cellTimeoutMs: HTMLInputElement;
  toolMode: HTMLSelectElement;
  networkEnabled: HTMLInputElement;
  sessionIdInput: HTMLInputElement;
  newSession: HTMLButtonElement;
  diagnose: HTMLButtonElement;
  diagnosticsOutput: HTMLPreElement;
  step: HTMLButtonElement;
  autorun: HTMLButtonElement;
  reset: HTMLButtonElement;
  exportJson: HTMLButtonElement;
  exportMd: HTMLButtonElement;
  exportIpynb: HTMLButtonElement;
  importFile: HTMLInputElement;
  importBtn: HTMLButtonElement;
  refreshAssets: HTMLButtonElement;
  summary: HTMLElement;
  assets: HTMLElement;
  activity: HTMLPreElement;
  cells: HTMLElement;
}

function knob(label: string, input: HTMLElement): HTMLElement {
  return h("label", { class: "knob" }, label, input);
}

export class ConsoleApp {
  state: ConsoleState = initialState();
  /** Captured by the JSON export button so a later import can reuse it. */
  lastExportedDocument: RunDocument | null = null;

  private els!: Elements;
  private stream: EventStream | null = null;
  private streamDone: Promise<void> = Promise.resolve();
  private lastSeenEventId: number | null = null;
  private ops: Promise<void> = Promise.resolve();

  constructor(
    readonly root: HTMLElement,
    readonly client: ApiClient,
    private readonly options: AppOptions = {},
  ) {}

  /** Build the static scaffold and bind handlers. Call once. */
  mount(): this {
    const els = this.buildScaffold();
    this.els = els;
    els.newSession.addEventListener("click", () => this.enqueue(() => this.newSessionFromForm()));
    els.diagnose.addEventListener("click", () => this.enqueue(() => this.diagnose()));
    els.step.addEventListener("click", () => this.enqueue(() => this.step()));
    els.autorun.addEventListener("click", () => this.enqueue(() => this.autorun()));
    els.reset.addEventListener("click", () => this.enqueue(() => this.reset()));
    els.exportJson.addEventListener("click", () => this.enqueue(() => this.exportAs("json")));
    els.exportMd.addEventListener("click", () => this.enqueue(() => this.exportAs("md")));
    els.exportIpynb.addEventListener("click", () => this.enqueue(() => this.exportAs("ipynb")));
    els.importBtn.addEventListener("click", () => this.enqueue(() => this.importFromFilePicker()));
    els.refreshAssets.addEventListener("click", () => this.enqueue(() => this.refreshAssets()));
    this.render();
    return this;
  }

  /** Resolves when every queued operation and any live stream finished. */
  async idle(): Promise<void> {
    let before;
    do {
      before = this.ops;
      await this.ops;
      await this.streamDone;
    } while (this.ops !== before); // a stream may queue follow-up work
  }

  private enqueue(operation: () => Promise<void>): void {
    this.ops = this.ops.then(async () => {
      try {
        await operation();
      } catch (error) {
        this.state = { ...this.state, lastError: describe(error) };
        this.render();
      }
    });
  }

  // ----- session operations ------------------------------------------------

  async newSessionFromForm(): Promise<void> {
    const spec = this.readSpec();
    const config = this.readConfigOverrides();
    const sessionId = this.els.sessionIdInput.value.trim();
    const created = await this.client.createSession(
      spec,
      config,
      sessionId || undefined,
    );
    this.lastSeenEventId = null;
    await this.refreshSession(created.session_id);
    await this.refreshAssets();
  }

  async step(): Promise<void> {
    const id = this.requireSession();
    await this.client.step(id);
    await this.refreshSession(id);
    await this.refreshAssets();
  }

  async autorun(): Promise<void> {
    const id = this.requireSession();
    await this.client.autorun(id);
    this.openStream(id);
  }

  async reset(): Promise<void> {
    const id = this.requireSession();
    this.stream?.close();
    await this.streamDone;
    await this.client.reset(id);
    this.state = { ...this.state, cells: [], activity: [], lastError: null };
    await this.refreshSession(id);
    await this.refreshAssets();
  }

  async exportAs(format: "json" | "md" | "ipynb"): Promise<void> {
    const id = this.requireSession();
    if (format === "json") {
      const doc = await this.client.exportJson(id);
      this.lastExportedDocument = doc;
      download(`${id}.run.json`, JSON.stringify(doc, null, 2), "application/json");
    } else {
      const text = await this.client.exportText(id, format);
      const name = format === "md" ? `${id}.md` : `${id}.ipynb`;
      download(name, text, "text/plain");
    }
  }

  async importDocument(doc: RunDocument): Promise<void> {
    const id = this.requireSession();
    await this.client.importRun(id, doc);
    await this.refreshSession(id);
    await this.refreshAssets();
  }

  private async importFromFilePicker(): Promise<void> {
    const file = this.els.importFile.files?.[0];
    if (!file) throw new Error("choose a run file first");
    const doc = JSON.parse(await file.text()) as RunDocument;
    await this.importDocument(doc);
  }

  async refreshAssets(): Promise<void> {
    const id = this.state.sessionId;
    if (!id) return;
    const root = await this.client.listAssets(id, "");
    const views: AssetView[] = [];
    for (const entry of root.entries) {
      if (!entry.is_dir) {
        views.push({ path: entry.name, entry });
        continue;
      }
      views.push({ path: entry.name, entry });
      const sub = await this.client.listAssets(id, entry.name);
      for (const child of sub.entries) {
        if (!child.is_dir) {
          views.push({ path: `${entry.name}/${child.name}`, entry: child });
        }
      }
    }
    renderAssets(this.els.assets, views, (path) => this.client.assetUrl(id, path));
  }

  async diagnose(): Promise<void> {
    const report = await this.client.diagnostics();
    const lines = [
      report.ok ? "all checks passed" : "PROBLEMS FOUND",
      ...report.backends.map(
        (b) =>
          `${b.role}: ${b.backend_id} ` +
          (b.reachable ? `reachable, auth ${b.auth_ok ? "ok" : "FAILED"}, ${b.latency_ms} ms` : `UNREACHABLE (${b.detail})`),
      ),
      `sandbox ${report.sandbox.runtime}: ` +
        (report.sandbox.available ? "available" : `UNAVAILABLE (${report.sandbox.detail})`),
      `state root ${report.state_root.path}: ` +
        (report.state_root.writable ? "writable" : "NOT WRITABLE"),
    ];
    this.els.diagnosticsOutput.textContent = lines.join("\n");
  }

  // ----- streaming ----------------------------------------------------------

  private openStream(id: string): void {
    this.state = { ...this.state, streaming: true };
    this.render();
    const stream = new EventStream(this.client.eventsUrl(id), this.client.rawFetch, {
      lastEventId: this.lastSeenEventId ?? undefined,
      retryMs: this.options.retryMs ?? 1000,
      maxRetries: 10,
      onEvent: (ev) => {
        this.state = applyEvent(this.state, ev);
        this.render();
      },
      onError: (error, willRetry) => {
        if (!willRetry) {
          this.state = { ...this.state, lastError: describe(error) };
          this.render();
        }
      },
    });
    this.stream = stream;
    this.streamDone = stream.run().then(() => {
      this.lastSeenEventId = stream.lastEventId;
      this.stream = null;
      this.state = { ...this.state, streaming: false };
      // One authoritative refresh; the stream only carries deltas.
      this.enqueue(async () => {
        if (this.state.sessionId) {
          await this.refreshSession(this.state.sessionId);
          await this.refreshAssets();
        }
      });
      this.render();
    });
  }

  // ----- helpers -------------------------------------------------------------

  private requireSession(): string {
    if (!this.state.sessionId) throw new Error("no session; create one first");
    return this.state.sessionId;
  }

  private async refreshSession(id: string): Promise<void> {
    const doc = await this.client.getSession(id);
    this.state = loadDocument(this.state, doc);
    this.render();
  }

  private readSpec(): SpecDoc {
    const spec: SpecDoc = {
      task_description: this.els.taskDescription.value.trim(),
    };
    const metrics = this.els.metrics.value.trim();
    if (metrics) spec.metrics = metrics;
    const data = this.els.dataLocation.value.trim();
    if (data) spec.data_location = data;
    const instructions: [string, string][] = [];
    for (const raw of this.els.instructions.value.split("\n")) {
      const line = raw.trim();
      if (!line) continue;
      const colon = line.indexOf(":");
      if (colon === -1) {
        instructions.push([line, ""]);
      } else {
        instructions.push([line.slice(0, colon).trim(), line.slice(colon + 1).trim()]);
      }
    }
    if (instructions.length) spec.general_instructions = instructions;
    return spec;
  }

  private readConfigOverrides(): Record<string, unknown> {
    const config: Record<string, unknown> = {};
    const numeric: [HTMLInputElement, string][] = [
      [this.els.maxSteps, "max_steps"],
      [this.els.maxCodeRetries, "max_code_retries"],
      [this.els.historyCharLimit, "history_char_limit"],
      [this.els.headTailLines, "head_tail_lines"],
      [this.els.cellTimeoutMs, "cell_timeout_ms"],
    ];
    for (const [input, key] of numeric) {
      if (input.value.trim()) config[key] = Number(input.value);
    }
    if (this.els.toolMode.value !== "native_tool_calls") {
      config.tool_mode = this.els.toolMode.value;
    }
    if (this.els.networkEnabled.checked) config.network_enabled = true;
    return config;
  }

  render(): void {
    renderSummary(this.els.summary, this.state);
    renderCells(this.els.cells, this.state);
    renderActivity(this.els.activity, this.state);
    syncControls(
      { step: this.els.step, autorun: this.els.autorun, reset: this.els.reset },
      this.state,
    );
  }

  private buildScaffold(): Elements {
    const taskDescription = h("textarea", { id: "task-description", rows: "5" }) as HTMLTextAreaElement;
    const metrics = h("input", { id: "metrics" }) as HTMLInputElement;
    const dataLocation = h("input", { id: "data-location" }) as HTMLInputElement;
    const instructions = h("textarea", {
      id: "general-instructions",
      rows: "3",
      placeholder: "one per line: Key: value",
    }) as HTMLTextAreaElement;
    const maxSteps = h("input", { id: "max-steps", type: "number", min: "1" }) as HTMLInputElement;
    const maxCodeRetries = h("input", { id: "max-code-retries", type: "number", min: "0" }) as HTMLInputElement;
    const historyCharLimit = h("input", { id: "history-char-limit", type: "number", min: "1" }) as HTMLInputElement;
    const headTailLines = h("input", { id: "head-tail-lines", type: "number", min: "0" }) as HTMLInputElement;
    const cellTimeoutMs = h("input", { id: "cell-timeout-ms", type: "number", min: "1" }) as HTMLInputElement;
    const toolMode = h("select", { id: "tool-mode" },
      h("option", { value: "native_tool_calls" }, "native tool calls"),
      h("option", { value: "emulated_json" }, "emulated JSON"),
    ) as HTMLSelectElement;
    const networkEnabled = h("input", { id: "network-enabled", type: "checkbox" }) as HTMLInputElement;
    const sessionIdInput = h("input", { id: "session-id", placeholder: "auto" }) as HTMLInputElement;
    const newSession = h("button", { id: "btn-new-session" }, "New session") as HTMLButtonElement;
    const diagnose = h("button", { id: "btn-diagnose" }, "Diagnose") as HTMLButtonElement;
    const diagnosticsOutput = h("pre", { id: "diagnostics-output" }) as HTMLPreElement;

    const step = h("button", { id: "btn-step" }, "Next step") as HTMLButtonElement;
    const autorun = h("button", { id: "btn-autorun" }, "Autorun") as HTMLButtonElement;
    const reset = h("button", { id: "btn-reset" }, "Reset") as HTMLButtonElement;
    const exportJson = h("button", { id: "btn-export-json" }, "Export JSON") as HTMLButtonElement;
    const exportMd = h("button", { id: "btn-export-md" }, "Export Markdown") as HTMLButtonElement;
    const exportIpynb = h("button", { id: "btn-export-ipynb" }, "Export notebook") as HTMLButtonElement;
    const importFile = h("input", { id: "import-file", type: "file", accept: ".json,application/json" }) as HTMLInputElement;
    const importBtn = h("button", { id: "btn-import" }, "Import") as HTMLButtonElement;
    const refreshAssets = h("button", { id: "btn-refresh-assets" }, "Refresh assets") as HTMLButtonElement;

    const summary = h("div", { id: "summary" });
    const assets = h("div", { id: "assets" });
    const activity = h("pre", { id: "activity-log" }) as HTMLPreElement;
    const cells = h("div", { id: "cells" });

    this.root.append(
      h("div", { class: "console" },
        h("aside", { id: "config-panel" },
          h("h2", {}, "Configuration"),
          knob("Task", taskDescription),
          knob("Metrics", metrics),
          knob("Data location", dataLocation),
          knob("Instructions", instructions),
          h("details", { class: "advanced" },
            h("summary", {}, "Run settings"),
            knob("Max steps", maxSteps),
            knob("Code retries", maxCodeRetries),
            knob("History char budget", historyCharLimit),
            knob("Output head/tail lines", headTailLines),
            knob("Cell timeout (ms)", cellTimeoutMs),
            knob("Tool mode", toolMode),
            h("label", { class: "knob knob-inline" }, networkEnabled, " allow network"),
            knob("Session id", sessionIdInput),
          ),
          h("div", { class: "button-row" }, newSession, diagnose),
          diagnosticsOutput,
        ),
        h("section", { id: "summary-panel" },
          h("h2", {}, "Project"),
          h("div", { id: "controls", class: "button-row" }, step, autorun, reset),
          summary,
          h("h3", {}, "Exports"),
          h("div", { id: "export-controls", class: "button-row" },
            exportJson, exportMd, exportIpynb, importFile, importBtn),
          h("h3", {}, "Assets"),
          refreshAssets,
          assets,
          h("h3", {}, "Activity"),
          activity,
        ),
        h("section", { id: "solution-panel" },
          h("h2", {}, "Solution"),
          cells,
        ),
      ),
    );

    return {
      taskDescription, metrics, dataLocation, instructions,
      maxSteps, maxCodeRetries, historyCharLimit, headTailLines, cellTimeoutMs,
      toolMode, networkEnabled, sessionIdInput,
      newSession, diagnose, diagnosticsOutput,
      step, autorun, reset,
      exportJson, exportMd, exportIpynb, importFile, importBtn,
      refreshAssets, summary, assets, activity, cells,
    };
  }
}

function describe(error: unknown): string {
  return error instanceof Error ? error.message : String(error);
}

function download(name: string, content: string, mime: string): void {
  // jsdom has no createObjectURL; exports still land in lastExportedDocument.
  if (typeof URL.createObjectURL !== "function") return;
  const blob = new Blob([content], { type: mime });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = name;
  anchor.click();
  URL.revokeObjectURL(url);
}

export { isTerminal };
