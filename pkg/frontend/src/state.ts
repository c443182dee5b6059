/** UI session state and its pure transition helpers.
 *
 * The displayed image is always a server render (the client never edits
 * pixels); this module only tracks which server state to show.
 */

import type { JobState, SessionInfo } from "./api.js";

export interface GalleryItem {
  index: number;
  score: number | null;
  previewUrl: string;
}

export interface UiSessionState {
  session: SessionInfo | null;
  imageVersion: number;      // bumped whenever the server-side output changed
  activeJobId: string | null;
  jobStatus: JobState["status"] | null;
  trace: number[];
  previewBase64: string | null;
  gallery: GalleryItem[];
  galleryJobId: string | null;
  lastError: string | null;
}

export function initialState(): UiSessionState {
  return {
    session: null,
    imageVersion: 0,
    activeJobId: null,
    jobStatus: null,
    trace: [],
    previewBase64: null,
    gallery: [],
    galleryJobId: null,
    lastError: null,
  };
}

export function withSession(state: UiSessionState, info: SessionInfo): UiSessionState {
  return { ...state, session: info, imageVersion: state.imageVersion + 1, lastError: null };
}

export function canSubmit(state: UiSessionState, maskEmpty: boolean): { ok: boolean; hint?: string } {
  if (!state.session) return { ok: false, hint: "create a session first" };
  if (state.activeJobId && state.jobStatus !== "done" && state.jobStatus !== "cancelled"
      && state.jobStatus !== "error") {
    return { ok: false, hint: "a job is already running" };
  }
  if (maskEmpty) return { ok: false, hint: "draw a region mask first" };
  return { ok: true };
}

export function jobStarted(state: UiSessionState, jobId: string): UiSessionState {
  return { ...state, activeJobId: jobId, jobStatus: "queued", trace: [], previewBase64: null };
}

export function jobUpdated(state: UiSessionState, job: JobState,
                           previewUrlFor: (index: number) => string): UiSessionState {
  const next: UiSessionState = {
    ...state,
    jobStatus: job.status,
    trace: job.trace,
    previewBase64: job.preview_png_base64 ?? state.previewBase64,
    lastError: job.status === "error" ? job.error : state.lastError,
  };
  if (job.status === "done" && job.results.length > 0) {
    next.gallery = job.results.map((r) => ({
      index: r.index,
      score: r.score,
      previewUrl: previewUrlFor(r.index),
    }));
    next.galleryJobId = job.id;
  } else if (job.status === "done") {
    next.imageVersion = state.imageVersion + 1; // plain edit committed server-side
  }
  return next;
}

export function jobFinishedCleanup(state: UiSessionState): UiSessionState {
  return { ...state, activeJobId: null };
}

/** Downsample a trace to at most `points` values for the sparkline. */
export function sparkline(trace: number[], points = 60): number[] {
  if (trace.length <= points) return [...trace];
  const out: number[] = [];
  for (let i = 0; i < points; i++) {
    out.push(trace[Math.floor((i * (trace.length - 1)) / (points - 1))]);
  }
  return out;
}

/** Map a sparkline to y pixel offsets (0 = top) for a given height. */
export function sparklinePath(values: number[], height: number): number[] {
  if (values.length === 0) return [];
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  return values.map((v) => Math.round(((hi - v) / span) * (height - 1)));
}

export function undoRedoApplied(state: UiSessionState, changed: boolean,
                                cursor: number): UiSessionState {
  if (!changed || !state.session) return state;
  return {
    ...state,
    session: { ...state.session, cursor },
    imageVersion: state.imageVersion + 1,
  };
}

export function galleryAdopted(state: UiSessionState, info: SessionInfo): UiSessionState {
  return {
    ...withSession(state, info),
    gallery: [],
    galleryJobId: null,
  };
}
