/**
 * DOM rendering for the three panels. Pure: state in, elements out.
 * Everything is built with createElement (no innerHTML) so cell sources
 * and outputs can never inject markup.
 */

import type { AssetEntry, CellDoc } from "./api.js";
import type { ConsoleState } from "./store.js";
import { isTerminal } from "./store.js";

type Child = Node | string;

export function h(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Child[]
): HTMLElement {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) el.setAttribute(key, value);
  for (const child of children) {
    el.append(typeof child === "string" ? document.createTextNode(child) : child);
  }
  return el;
}

function replaceChildren(el: HTMLElement, ...nodes: Child[]): void {
  el.replaceChildren(...nodes.map((n) => (typeof n === "string" ? document.createTextNode(n) : n)));
}

const KIND_LABEL: Record<CellDoc["kind"], string> = {
  text: "Plan",
  code: "Code",
  finish: "Finish",
};

export function renderCell(cell: CellDoc): HTMLElement {
  const root = h("article", {
    class: `cell cell-${cell.kind}`,
    "data-cell": "",
    "data-kind": cell.kind,
    "data-cell-id": String(cell.id),
  });
  root.append(
    h(
      "header",
      { class: "cell-header" },
      h("span", { class: "cell-kind" }, `${KIND_LABEL[cell.kind]} #${cell.ordinal}`),
      h("span", { class: "cell-purpose" }, cell.purpose_or_spec),
    ),
  );

  if (cell.kind === "finish") {
    root.append(h("p", { class: "finish-summary" }, cell.source));
    return root;
  }

  const source = h("pre", { class: "cell-source" }, h("code", {}, cell.source));
  if (cell.kind === "code") source.classList.add("language-python");
  root.append(source);

  const final = cell.results[cell.results.length - 1];
  if (final) {
    if (cell.results.length > 1) {
      root.append(
        h("p", { class: "cell-attempts" },
          `${cell.results.length} attempts; showing the last`),
      );
    }
    if (final.stdout) {
      root.append(h("pre", { class: "cell-stdout", "data-stream": "stdout" }, final.stdout));
    }
    if (final.stderr) {
      root.append(h("pre", { class: "cell-stderr", "data-stream": "stderr" }, final.stderr));
    }
    root.append(
      h("footer", { class: "cell-result-meta" },
        `${final.status} in ${final.duration_ms} ms` +
          (final.artifacts_written.length
            ? `, wrote ${final.artifacts_written.join(", ")}`
            : "")),
    );
  }
  return root;
}

export function renderCells(container: HTMLElement, state: ConsoleState): void {
  replaceChildren(container, ...state.cells.map(renderCell));
}

export function renderSummary(container: HTMLElement, state: ConsoleState): void {
  const children: Child[] = [];
  if (!state.sessionId) {
    children.push(h("p", { class: "placeholder" }, "No session yet."));
  } else {
    children.push(
      h("dl", { class: "session-meta" },
        h("dt", {}, "Session"),
        h("dd", { id: "meta-session-id" }, state.sessionId),
        h("dt", {}, "Status"),
        h("dd", { id: "meta-status", "data-status": state.status },
          state.status + (state.streaming ? " (streaming)" : "")),
        h("dt", {}, "Steps"),
        h("dd", { id: "meta-step-count" }, String(state.stepCount)),
        h("dt", {}, "Cells"),
        h("dd", { id: "meta-cell-count" }, String(state.cellCount)),
      ),
    );
    if (state.spec) {
      children.push(h("h3", {}, "Brief"));
      children.push(h("p", { class: "task-description" }, state.spec.task_description));
      const facts = h("dl", { class: "spec-facts" });
      if (state.spec.metrics) {
        facts.append(h("dt", {}, "Metrics"), h("dd", {}, state.spec.metrics));
      }
      if (state.spec.data_location) {
        facts.append(h("dt", {}, "Data"), h("dd", {}, state.spec.data_location));
      }
      for (const [key, value] of state.spec.general_instructions ?? []) {
        facts.append(h("dt", {}, key), h("dd", {}, value));
      }
      if (facts.childNodes.length) children.push(facts);
    }
    if (state.lastError) {
      children.push(h("p", { class: "last-error", role: "alert" }, state.lastError));
    }
  }
  replaceChildren(container, ...children);
}

export function renderActivity(container: HTMLElement, state: ConsoleState): void {
  container.textContent = state.activity.join("\n");
  container.scrollTop = container.scrollHeight;
}

const IMAGE_SUFFIXES = [".png", ".svg", ".jpg", ".jpeg", ".gif"];

function isImage(name: string): boolean {
  const lower = name.toLowerCase();
  return IMAGE_SUFFIXES.some((suffix) => lower.endsWith(suffix));
}

export interface AssetView {
  path: string;
  entry: AssetEntry;
}

export function renderAssets(
  container: HTMLElement,
  assets: AssetView[],
  urlFor: (path: string) => string,
): void {
  if (!assets.length) {
    replaceChildren(container, h("p", { class: "placeholder" }, "No assets."));
    return;
  }
  const list = h("ul", { class: "asset-list" });
  for (const { path, entry } of assets) {
    const item = h("li", { "data-asset": path });
    if (entry.is_dir) {
      item.append(h("span", { class: "asset-dir" }, path + "/"));
    } else if (isImage(entry.name)) {
      item.append(
        h("figure", { class: "asset-thumb" },
          h("img", { src: urlFor(path), alt: path, loading: "lazy" }),
          h("figcaption", {},
            h("a", { href: urlFor(path), target: "_blank" }, path)),
        ),
      );
    } else {
      item.append(
        h("a", { href: urlFor(path), target: "_blank" }, path),
        h("span", { class: "asset-size" },
          entry.size === null ? "" : ` (${entry.size} bytes)`),
      );
    }
    list.append(item);
  }
  replaceChildren(container, list);
}

/** Enable/disable the run controls for the current lifecycle state. */
export function syncControls(
  buttons: { step: HTMLButtonElement; autorun: HTMLButtonElement; reset: HTMLButtonElement },
  state: ConsoleState,
): void {
  const haveSession = state.sessionId !== null;
  const runnable = haveSession && !isTerminal(state.status) && !state.streaming;
  buttons.step.disabled = !runnable;
  buttons.autorun.disabled = !runnable;
  buttons.reset.disabled = !haveSession;
}
