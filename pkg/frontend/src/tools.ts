/** Tool palette definitions: job request builders and imprint placement. */

import type { JobRequest, OptimizeSettings } from "./api.js";

export type ToolId =
  | "variance" | "tv" | "magnitude" | "patch_dict" | "periodicity"
  | "range" | "l1_target" | "hsv" | "classifier" | "diversity"
  | "explore_classes";

/** The six designated color-adjustment buttons. */
export const HSV_BUTTONS = [
  { label: "hue -", attribute: "hue", amount: -15 },
  { label: "hue +", attribute: "hue", amount: 15 },
  { label: "sat -", attribute: "saturation", amount: -0.15 },
  { label: "sat +", attribute: "saturation", amount: 0.15 },
  { label: "value -", attribute: "value", amount: -0.1 },
  { label: "value +", attribute: "value", amount: 0.1 },
] as const;

export function buildJobRequest(
  tool: ToolId,
  params: Record<string, unknown>,
  maskName: string | null,
  config: OptimizeSettings,
): JobRequest {
  return {
    objectives: [{ type: tool, ...params }],
    mask: maskName,
    config,
  };
}

export interface ImprintPlacement {
  top: number;
  left: number;
  translate: [number, number];
  scale: number;
  rotationDeg: number;
  contentHeight: number;
  contentWidth: number;
}

export interface NudgeLimits {
  imageHeight: number;
  imageWidth: number;
}

function footprint(p: ImprintPlacement): { h: number; w: number } {
  const rad = (Math.abs(p.rotationDeg) * Math.PI) / 180;
  const h = p.contentHeight * p.scale;
  const w = p.contentWidth * p.scale;
  return {
    h: Math.ceil(h * Math.abs(Math.cos(rad)) + w * Math.abs(Math.sin(rad))),
    w: Math.ceil(w * Math.abs(Math.cos(rad)) + h * Math.abs(Math.sin(rad))),
  };
}

/** Whether the placed content would stay inside the image after a nudge. */
export function nudgeAllowed(
  p: ImprintPlacement,
  limits: NudgeLimits,
  dTop: number,
  dLeft: number,
  scaleFactor = 1,
  dRotation = 0,
): boolean {
  const next: ImprintPlacement = {
    ...p,
    translate: [p.translate[0] + dTop, p.translate[1] + dLeft],
    scale: p.scale * scaleFactor,
    rotationDeg: p.rotationDeg + dRotation,
  };
  const { h, w } = footprint(next);
  const top = next.top + next.translate[0];
  const left = next.left + next.translate[1];
  return top >= 0 && left >= 0 && top + h <= limits.imageHeight && left + w <= limits.imageWidth;
}

export function applyNudge(
  p: ImprintPlacement,
  limits: NudgeLimits,
  dTop: number,
  dLeft: number,
  scaleFactor = 1,
  dRotation = 0,
): ImprintPlacement {
  if (!nudgeAllowed(p, limits, dTop, dLeft, scaleFactor, dRotation)) return p;
  return {
    ...p,
    translate: [p.translate[0] + dTop, p.translate[1] + dLeft],
    scale: p.scale * scaleFactor,
    rotationDeg: p.rotationDeg + dRotation,
  };
}

export function imprintRequestBody(
  p: ImprintPlacement,
  source: { content?: string; crop?: [number, number, number, number] },
): Record<string, unknown> {
  return {
    ...(source.content !== undefined ? { content: source.content } : {}),
    ...(source.crop !== undefined ? { crop: source.crop } : {}),
    top: p.top,
    left: p.left,
    translate: p.translate,
    scale: p.scale,
    rotation_deg: p.rotationDeg,
  };
}
