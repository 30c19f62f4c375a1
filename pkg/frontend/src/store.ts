/**
 * Console view state and the reducer that feeds it from stream events.
 *
 * Cells are keyed by id: the service re-emits a cell whenever it changes
 * (new execution attempt, rewritten source), so "apply" means upsert.
 */

import type { CellDoc, RunDocument, SpecDoc } from "./api.js";
import type { SseEvent } from "./sse.js";

const ACTIVITY_CAP = 250;

export interface ConsoleState {
  sessionId: string | null;
  spec: SpecDoc | null;
  status: string;
  stepCount: number;
  cellCount: number;
  cells: CellDoc[];
  activity: string[];
  lastError: string | null;
  streaming: boolean;
}

export function initialState(): ConsoleState {
  return {
    sessionId: null,
    spec: null,
    status: "idle",
    stepCount: 0,
    cellCount: 0,
    cells: [],
    activity: [],
    lastError: null,
    streaming: false,
  };
}

export const TERMINAL_STATUSES = new Set(["finished", "stopped_max_steps", "failed"]);

export function isTerminal(status: string): boolean {
  return TERMINAL_STATUSES.has(status);
}

export function upsertCell(cells: CellDoc[], cell: CellDoc): CellDoc[] {
  const at = cells.findIndex((c) => c.id === cell.id);
  if (at === -1) return [...cells, cell].sort((a, b) => a.id - b.id);
  const next = cells.slice();
  next[at] = cell;
  return next;
}

interface StatusPayload {
  status: string;
  step_count: number;
  cell_count: number;
}

interface TracePayload {
  record: { kind: string; seq: number; data: Record<string, unknown> };
}

function traceLine(payload: TracePayload): string {
  const { kind, seq, data } = payload.record;
  const fields = Object.entries(data)
    .map(([key, value]) => `${key}=${typeof value === "string" ? value : JSON.stringify(value)}`)
    .join(" ");
  return `#${seq} [${kind}] ${fields}`.trimEnd();
}

/** Apply one server-sent event. Returns the next state (input untouched). */
export function applyEvent(state: ConsoleState, ev: SseEvent): ConsoleState {
  switch (ev.event) {
    case "status": {
      const payload = JSON.parse(ev.data) as StatusPayload;
      return {
        ...state,
        status: payload.status,
        stepCount: payload.step_count,
        cellCount: payload.cell_count,
      };
    }
    case "cell": {
      const payload = JSON.parse(ev.data) as { cell: CellDoc };
      const cells = upsertCell(state.cells, payload.cell);
      return { ...state, cells, cellCount: cells.length };
    }
    case "trace": {
      const line = traceLine(JSON.parse(ev.data) as TracePayload);
      const activity = [...state.activity, line].slice(-ACTIVITY_CAP);
      return { ...state, activity };
    }
    case "error": {
      const payload = JSON.parse(ev.data) as { detail: string };
      return { ...state, lastError: payload.detail };
    }
    default:
      return state;
  }
}

/** Replace the transcript with an authoritative run document. */
export function loadDocument(state: ConsoleState, doc: RunDocument): ConsoleState {
  return {
    ...state,
    sessionId: doc.session_id,
    spec: doc.spec,
    status: doc.status,
    stepCount: doc.step_count,
    cellCount: doc.cells.length,
    cells: doc.cells,
    lastError: null,
  };
}
