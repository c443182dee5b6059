/** Browser wiring: canvas, tool palette, progress, gallery.
 *
 * Every displayed image comes from the service; this file only routes user
 * gestures to API calls and re-renders what the server returns.
 */

import { ExplorerApi } from "./api.js";
import { MaskBitmap, MaskToolName, Point, polygonShouldClose } from "./mask.js";
import { pollUntilDone } from "./polling.js";
import {
  canSubmit, galleryAdopted, initialState, jobFinishedCleanup, jobStarted,
  jobUpdated, sparkline, sparklinePath, undoRedoApplied, withSession,
} from "./state.js";
import {
  HSV_BUTTONS, ImprintPlacement, ToolId, applyNudge, buildJobRequest,
  imprintRequestBody,
} from "./tools.js";

const api = new ExplorerApi("");
let state = initialState();
let mask: MaskBitmap | null = null;
let maskCounter = 0;
let maskTool: MaskToolName = "rectangle";
let penWidth = 8;
let dragStart: Point | null = null;
let penTrail: Point[] = [];
let polygonPoints: Point[] = [];
let imprint: ImprintPlacement | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function imageEl(): HTMLImageElement {
  return $("output") as HTMLImageElement;
}

function overlay(): HTMLCanvasElement {
  return $("mask-overlay") as HTMLCanvasElement;
}

function setStatus(text: string): void {
  $("status").textContent = text;
}

function refreshImage(): void {
  if (state.session) imageEl().src = api.imageUrl(state.session.id);
}

function renderMask(): void {
  if (!mask) return;
  const canvas = overlay();
  const ctx = canvas.getContext("2d")!;
  const frame = ctx.createImageData(mask.width, mask.height);
  const rgba = mask.toRgba();
  for (let i = 0; i < mask.data.length; i++) {
    frame.data[4 * i] = 255;
    frame.data[4 * i + 1] = 64;
    frame.data[4 * i + 2] = 0;
    frame.data[4 * i + 3] = rgba[4 * i] > 0 ? 110 : 0;
  }
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.putImageData(frame, 0, 0);
}

function renderSparkline(): void {
  const canvas = $("sparkline") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const ys = sparklinePath(sparkline(state.trace, canvas.width), canvas.height);
  ctx.beginPath();
  ys.forEach((y, i) => (i === 0 ? ctx.moveTo(i, y) : ctx.lineTo(i, y)));
  ctx.strokeStyle = "#2266cc";
  ctx.stroke();
}

function renderGallery(): void {
  const grid = $("gallery");
  grid.innerHTML = "";
  if (state.gallery.length === 0) {
    grid.textContent = "no alternative outputs yet";
    return;
  }
  for (const item of state.gallery) {
    const card = document.createElement("div");
    card.className = "card";
    const img = document.createElement("img");
    img.src = item.previewUrl;
    const badge = document.createElement("span");
    badge.textContent = item.score === null ? `#${item.index}` : `score ${item.score.toFixed(3)}`;
    const adopt = document.createElement("button");
    adopt.textContent = "adopt";
    adopt.onclick = async () => {
      if (!state.session || !state.galleryJobId) return;
      const info = await api.adopt(state.session.id, state.galleryJobId, item.index);
      state = galleryAdopted(state, info);
      refreshImage();
      renderGallery();
      void refreshVerifyBadge();
    };
    card.append(img, badge, adopt);
    grid.append(card);
  }
}

async function refreshVerifyBadge(): Promise<void> {
  if (!state.session) return;
  const report = await api.verify(state.session.id);
  $("verify-badge").textContent = report.consistent
    ? "consistent with the compressed code"
    : `INCONSISTENT (${report.total_violations} blocks)`;
}

function canvasPoint(event: MouseEvent): Point {
  const rect = overlay().getBoundingClientRect();
  return {
    x: Math.round(((event.clientX - rect.left) / rect.width) * overlay().width),
    y: Math.round(((event.clientY - rect.top) / rect.height) * overlay().height),
  };
}

function bindMaskTools(): void {
  const canvas = overlay();
  canvas.addEventListener("mousedown", (ev) => {
    if (!mask) return;
    const p = canvasPoint(ev);
    if (maskTool === "pen") penTrail = [p];
    else if (maskTool === "polygon") {
      if (polygonShouldClose(polygonPoints, p)) {
        mask.polygon(polygonPoints);
        polygonPoints = [];
        renderMask();
      } else polygonPoints.push(p);
    } else dragStart = p;
  });
  canvas.addEventListener("dblclick", () => {
    if (mask && polygonPoints.length >= 3) {
      mask.polygon(polygonPoints);
      polygonPoints = [];
      renderMask();
    }
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!mask || maskTool !== "pen" || penTrail.length === 0) return;
    if (ev.buttons !== 1) return;
    penTrail.push(canvasPoint(ev));
    mask.pen(penTrail.slice(-2), penWidth);
    renderMask();
  });
  canvas.addEventListener("mouseup", (ev) => {
    if (!mask) return;
    const p = canvasPoint(ev);
    if (maskTool === "rectangle" && dragStart) {
      mask.rectangle(dragStart.x, dragStart.y, p.x, p.y);
    } else if (maskTool === "line" && dragStart) {
      mask.line(dragStart, p, penWidth);
    } else if (maskTool === "circle" && dragStart) {
      mask.circle(dragStart.x, dragStart.y, Math.hypot(p.x - dragStart.x, p.y - dragStart.y));
    }
    dragStart = null;
    penTrail = [];
    renderMask();
  });
}

async function maskToPngBlob(bitmap: MaskBitmap): Promise<Blob> {
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(bitmap.toRgba(), bitmap.width, bitmap.height), 0, 0);
  return new Promise((resolve, reject) =>
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("PNG encode failed"))), "image/png"));
}

async function uploadCurrentMask(): Promise<string | null> {
  if (!state.session || !mask || mask.isEmpty()) return null;
  const name = `region-${++maskCounter}`;
  await api.uploadMask(state.session.id, name, await maskToPngBlob(mask));
  return name;
}

async function runTool(tool: ToolId, params: Record<string, unknown>): Promise<void> {
  const gate = canSubmit(state, !mask || mask.isEmpty());
  if (!gate.ok) {
    setStatus(gate.hint ?? "cannot submit");
    return;
  }
  const session = state.session!;
  const maskName = await uploadCurrentMask();
  const steps = parseInt(($("steps") as HTMLInputElement).value, 10) || 200;
  const request = buildJobRequest(tool, params, maskName, { steps });
  const { job_id } = await api.submitJob(session.id, request);
  state = jobStarted(state, job_id);
  setStatus(`job ${job_id} running`);
  $("cancel").onclick = () => void api.cancelJob(job_id);
  const final = await pollUntilDone(api, job_id, (job) => {
    state = jobUpdated(state, job, (i) => api.resultPreviewUrl(job_id, i));
    renderSparkline();
    if (state.previewBase64) imageEl().src = `data:image/png;base64,${state.previewBase64}`;
    setStatus(`job ${job.status}: step ${job.trace.length}`);
  });
  state = jobFinishedCleanup(state);
  if (final.status === "done") {
    const info = await api.getSession(session.id);
    state = withSession(state, info);
    refreshImage();
    renderGallery();
    void refreshVerifyBadge();
  } else {
    refreshImage(); // cancelled or failed: fall back to the committed state
  }
  setStatus(`job ${final.status}`);
}

function bindToolPanel(): void {
  $("run-tv").onclick = () => void runTool("tv", {});
  $("run-variance").onclick = () =>
    void runTool("variance", {
      delta: parseFloat(($("variance-delta") as HTMLInputElement).value) || 10,
      direction: ($("variance-direction") as HTMLSelectElement).value,
    });
  $("run-magnitude").onclick = () =>
    void runTool("magnitude", {
      delta: parseFloat(($("magnitude-delta") as HTMLInputElement).value) || 0.3,
      direction: ($("magnitude-direction") as HTMLSelectElement).value,
    });
  $("run-periodicity").onclick = () =>
    void runTool("periodicity", { auto_axis: parseInt(($("period-axis") as HTMLSelectElement).value, 10) });
  $("run-diversity").onclick = () =>
    void runTool("diversity", { count: 3, proximity_weight: 0 });
  $("run-classes").onclick = () =>
    void runTool("explore_classes", { hook: "toy", classes: [0, 1, 2, 3] });
  const hsvPanel = $("hsv-buttons");
  for (const button of HSV_BUTTONS) {
    const el = document.createElement("button");
    el.textContent = button.label;
    el.onclick = () =>
      void runTool("hsv", { attribute: button.attribute, amount: button.amount });
    hsvPanel.append(el);
  }
}

function bindImprint(): void {
  $("imprint-start").onclick = () => {
    if (!mask || !state.session) return;
    const box = mask.bbox();
    if (!box) {
      setStatus("draw the imprint target region first");
      return;
    }
    imprint = {
      top: box.y0,
      left: box.x0,
      translate: [0, 0],
      scale: 1,
      rotationDeg: 0,
      contentHeight: box.y1 - box.y0 + 1,
      contentWidth: box.x1 - box.x0 + 1,
    };
    void previewImprint();
  };
  const limits = () => ({
    imageHeight: state.session?.height ?? 0,
    imageWidth: state.session?.width ?? 0,
  });
  const nudges: [string, [number, number, number, number]][] = [
    ["imprint-up", [-1, 0, 1, 0]],
    ["imprint-down", [1, 0, 1, 0]],
    ["imprint-left", [0, -1, 1, 0]],
    ["imprint-right", [0, 1, 1, 0]],
    ["imprint-grow", [0, 0, 1.05, 0]],
    ["imprint-shrink", [0, 0, 0.95, 0]],
    ["imprint-rot-ccw", [0, 0, 1, -5]],
    ["imprint-rot-cw", [0, 0, 1, 5]],
  ];
  for (const [id, [dt, dl, sf, dr]] of nudges) {
    $(id).onclick = () => {
      if (!imprint) return;
      imprint = applyNudge(imprint, limits(), dt, dl, sf, dr);
      void previewImprint();
    };
  }
  $("imprint-autoshift").onclick = async () => {
    if (!imprint || !state.session) return;
    const body = imprintRequestBody(imprint, {
      crop: [imprint.top, imprint.left, imprint.contentHeight, imprint.contentWidth],
    });
    const result = await api.shiftSearch(state.session.id, body);
    imprint = applyNudge(imprint, limits(), result.dy, result.dx);
    $("imprint-residual").textContent = `best shift (${result.dy}, ${result.dx}), residual ${result.residual.toFixed(2)}`;
    void previewImprint();
  };
  $("imprint-apply").onclick = () =>
    void runTool("l1_target", { target: "imprint_preview" });
}

async function previewImprint(): Promise<void> {
  if (!imprint || !state.session) return;
  const body = imprintRequestBody(imprint, {
    crop: [imprint.top, imprint.left, imprint.contentHeight, imprint.contentWidth],
  });
  const result = await api.imprintPreview(state.session.id, body);
  imageEl().src = `data:image/png;base64,${result.preview_png_base64}`;
  $("imprint-residual").textContent = `projection residual ${result.residual.toFixed(2)}`;
}

function bindSession(): void {
  ($("upload") as HTMLInputElement).onchange = async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const qfRaw = ($("qf") as HTMLInputElement).value;
    const qf = file.type === "image/jpeg" ? undefined : parseInt(qfRaw, 10) || 25;
    try {
      const info = await api.createSession(file, file.name, qf);
      state = withSession(state, info);
      mask = new MaskBitmap(info.width, info.height);
      overlay().width = info.width;
      overlay().height = info.height;
      refreshImage();
      renderMask();
      renderGallery();
      setStatus(`session ${info.id} (${info.width}x${info.height})`);
      void refreshVerifyBadge();
    } catch (err) {
      setStatus(`upload failed: ${(err as Error).message}`);
    }
  };
  $("undo").onclick = async () => {
    if (!state.session) return;
    const step = await api.undo(state.session.id);
    state = undoRedoApplied(state, step.changed, step.cursor);
    if (step.changed) refreshImage();
  };
  $("redo").onclick = async () => {
    if (!state.session) return;
    const step = await api.redo(state.session.id);
    state = undoRedoApplied(state, step.changed, step.cursor);
    if (step.changed) refreshImage();
  };
  $("mask-clear").onclick = () => {
    mask?.clear();
    polygonPoints = [];
    renderMask();
  };
  ($("mask-tool") as HTMLSelectElement).onchange = (ev) => {
    maskTool = (ev.target as HTMLSelectElement).value as MaskToolName;
  };
  ($("pen-width") as HTMLInputElement).onchange = (ev) => {
    penWidth = parseInt((ev.target as HTMLInputElement).value, 10) || 8;
  };
  $("export-jfif").onclick = () => {
    if (state.session) window.open(api.exportUrl(state.session.id, "jfif"));
  };
  $("export-png").onclick = () => {
    if (state.session) window.open(api.exportUrl(state.session.id, "png"));
  };
}

export function start(): void {
  bindSession();
  bindMaskTools();
  bindToolPanel();
  bindImprint();
  setStatus("upload a JPEG (or any image plus a quality factor) to begin");
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
