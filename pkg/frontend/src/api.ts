/** Typed client for the jpegexplore session service. */

export interface SessionInfo {
  id: string;
  width: number;
  height: number;
  color: boolean;
  sampling: string;
  history_length: number;
  cursor: number;
  history: string[];
  masks: string[];
  targets: string[];
  busy: boolean;
}

export interface JobResultEntry {
  index: number;
  score: number | null;
}

export interface JobState {
  id: string;
  session: string;
  kind: string;
  status: "queued" | "running" | "done" | "cancelled" | "error";
  error: string | null;
  trace: number[];
  has_preview: boolean;
  results: JobResultEntry[];
  preview_png_base64?: string;
}

export interface OptimizeSettings {
  steps?: number;
  learning_rate?: number;
  seed?: number;
}

export interface JobRequest {
  objectives: Record<string, unknown>[];
  mask?: string | null;
  config?: OptimizeSettings;
}

export interface HistoryStep {
  changed: boolean;
  cursor: number;
  history_length: number;
}

export interface ImprintPreviewResponse {
  residual: number;
  stored_as: string;
  preview_png_base64: string;
}

export interface ShiftSearchResponse {
  dy: number;
  dx: number;
  residual: number;
  residuals: number[][];
}

export interface VerifyReport {
  mode: string;
  consistent: boolean;
  total_violations: number;
  worst_deviation: number;
  channels: { channel: string; violating_blocks: number }[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      // fall through with the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ExplorerApi {
  constructor(private base: string = "", private fetchFn: typeof fetch = fetch) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(file: Blob, name: string, qf?: number, sampling?: string): Promise<SessionInfo> {
    const form = new FormData();
    form.append("file", file, name);
    if (qf !== undefined) form.append("qf", String(qf));
    if (sampling !== undefined) form.append("sampling", sampling);
    return expectJson(await this.fetchFn(this.url("/sessions"), { method: "POST", body: form }));
  }

  async getSession(id: string): Promise<SessionInfo> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}`)));
  }

  imageUrl(id: string): string {
    // cache-busted: the current output changes after every committed edit
    return this.url(`/sessions/${id}/image?t=${Date.now()}`);
  }

  exportUrl(id: string, format: "jfif" | "png" | "ppm"): string {
    return this.url(`/sessions/${id}/export?format=${format}`);
  }

  async exportBytes(id: string, format: "jfif" | "png" | "ppm"): Promise<{ bytes: ArrayBuffer; consistency: string | null }> {
    const resp = await this.fetchFn(this.url(`/sessions/${id}/export?format=${format}`));
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return { bytes: await resp.arrayBuffer(), consistency: resp.headers.get("X-Consistency") };
  }

  async uploadMask(id: string, name: string, png: Blob): Promise<{ name: string; positive_pixels: number }> {
    const form = new FormData();
    form.append("name", name);
    form.append("file", png, `${name}.png`);
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/masks`), { method: "POST", body: form }));
  }

  async uploadTarget(id: string, name: string, png: Blob): Promise<{ name: string }> {
    const form = new FormData();
    form.append("name", name);
    form.append("file", png, `${name}.png`);
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/targets`), { method: "POST", body: form }));
  }

  async submitJob(id: string, request: JobRequest): Promise<{ job_id: string; status: string }> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/jobs`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    }));
  }

  async pollJob(jobId: string): Promise<JobState> {
    return expectJson(await this.fetchFn(this.url(`/jobs/${jobId}`)));
  }

  async cancelJob(jobId: string): Promise<JobState> {
    return expectJson(await this.fetchFn(this.url(`/jobs/${jobId}/cancel`), { method: "POST" }));
  }

  resultPreviewUrl(jobId: string, index: number): string {
    return this.url(`/jobs/${jobId}/results/${index}`);
  }

  async undo(id: string): Promise<HistoryStep> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/undo`), { method: "POST" }));
  }

  async redo(id: string): Promise<HistoryStep> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/redo`), { method: "POST" }));
  }

  async adopt(id: string, jobId: string, index: number): Promise<SessionInfo> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/adopt`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ job_id: jobId, index }),
    }));
  }

  async imprintPreview(id: string, body: Record<string, unknown>): Promise<ImprintPreviewResponse> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/imprint/preview`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }));
  }

  async shiftSearch(id: string, body: Record<string, unknown>): Promise<ShiftSearchResponse> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/imprint/shift_search`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }));
  }

  async verify(id: string): Promise<VerifyReport> {
    return expectJson(await this.fetchFn(this.url(`/sessions/${id}/verify`)));
  }
}
