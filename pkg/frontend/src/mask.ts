/** Client-side region mask: full-resolution weight bitmap with drawing ops.
 *
 * Edits stay local until the bitmap is uploaded as a grayscale PNG; the
 * server is the only thing that ever touches pixels of the image itself.
 */

export interface Point {
  x: number;
  y: number;
}

export class MaskBitmap {
  readonly data: Uint8Array;

  constructor(readonly width: number, readonly height: number) {
    if (width < 1 || height < 1) throw new Error("mask dimensions must be positive");
    this.data = new Uint8Array(width * height);
  }

  clone(): MaskBitmap {
    const copy = new MaskBitmap(this.width, this.height);
    copy.data.set(this.data);
    return copy;
  }

  clear(): void {
    this.data.fill(0);
  }

  at(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  private stamp(x: number, y: number, value: number): void {
    if (x >= 0 && x < this.width && y >= 0 && y < this.height) {
      this.data[y * this.width + x] = value;
    }
  }

  /** Filled disc, the pen tip; width is the stroke diameter in pixels. */
  private stampDisc(cx: number, cy: number, diameter: number, value: number): void {
    const r = Math.max(0.5, diameter / 2);
    const r2 = r * r;
    for (let y = Math.floor(cy - r); y <= Math.ceil(cy + r); y++) {
      for (let x = Math.floor(cx - r); x <= Math.ceil(cx + r); x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.stamp(x, y, value);
      }
    }
  }

  pen(points: Point[], width: number, value = 255): void {
    for (let i = 0; i < points.length; i++) {
      if (i > 0) this.line(points[i - 1], points[i], width, value);
      else this.stampDisc(points[i].x, points[i].y, width, value);
    }
  }

  line(a: Point, b: Point, width: number, value = 255): void {
    const steps = Math.max(Math.abs(b.x - a.x), Math.abs(b.y - a.y), 1);
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stampDisc(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), width, value);
    }
  }

  rectangle(x0: number, y0: number, x1: number, y1: number, value = 255): void {
    const [xa, xb] = [Math.min(x0, x1), Math.max(x0, x1)];
    const [ya, yb] = [Math.min(y0, y1), Math.max(y0, y1)];
    for (let y = Math.max(0, ya); y <= Math.min(this.height - 1, yb); y++) {
      for (let x = Math.max(0, xa); x <= Math.min(this.width - 1, xb); x++) {
        this.data[y * this.width + x] = value;
      }
    }
  }

  circle(cx: number, cy: number, radius: number, value = 255): void {
    this.stampDisc(cx, cy, radius * 2, value);
  }

  /** Even-odd scanline fill of a closed polygon. */
  polygon(points: Point[], value = 255): void {
    if (points.length < 3) throw new Error("polygon needs at least 3 points");
    const ys = points.map((p) => p.y);
    const y0 = Math.max(0, Math.floor(Math.min(...ys)));
    const y1 = Math.min(this.height - 1, Math.ceil(Math.max(...ys)));
    for (let y = y0; y <= y1; y++) {
      const crossings: number[] = [];
      for (let i = 0; i < points.length; i++) {
        const a = points[i];
        const b = points[(i + 1) % points.length];
        if (a.y === b.y) continue;
        const [lo, hi] = a.y < b.y ? [a, b] : [b, a];
        if (y + 0.5 >= lo.y && y + 0.5 < hi.y) {
          crossings.push(lo.x + ((y + 0.5 - lo.y) / (hi.y - lo.y)) * (hi.x - lo.x));
        }
      }
      crossings.sort((p, q) => p - q);
      for (let k = 0; k + 1 < crossings.length; k += 2) {
        const xa = Math.max(0, Math.ceil(crossings[k] - 0.5));
        const xb = Math.min(this.width - 1, Math.floor(crossings[k + 1] - 0.5));
        for (let x = xa; x <= xb; x++) this.data[y * this.width + x] = value;
      }
    }
  }

  isEmpty(): boolean {
    return !this.data.some((v) => v > 0);
  }

  positiveCount(): number {
    let n = 0;
    for (const v of this.data) if (v > 0) n++;
    return n;
  }

  bbox(): { x0: number; y0: number; x1: number; y1: number } | null {
    let x0 = this.width, y0 = this.height, x1 = -1, y1 = -1;
    for (let y = 0; y < this.height; y++) {
      for (let x = 0; x < this.width; x++) {
        if (this.data[y * this.width + x] > 0) {
          if (x < x0) x0 = x;
          if (x > x1) x1 = x;
          if (y < y0) y0 = y;
          if (y > y1) y1 = y;
        }
      }
    }
    return x1 < 0 ? null : { x0, y0, x1, y1 };
  }

  /** Grayscale RGBA buffer for canvas rendering and PNG encoding. */
  toRgba(): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(this.width * this.height * 4);
    for (let i = 0; i < this.data.length; i++) {
      const v = this.data[i];
      out[4 * i] = v;
      out[4 * i + 1] = v;
      out[4 * i + 2] = v;
      out[4 * i + 3] = 255;
    }
    return out;
  }
}

export type MaskToolName = "pen" | "line" | "rectangle" | "polygon" | "circle";
export type MaskMode = "region" | "brightness-scribble";

/** Double-click (or clicking the first vertex) closes a polygon in progress. */
export function polygonShouldClose(points: Point[], next: Point, tolerance = 4): boolean {
  if (points.length < 3) return false;
  const first = points[0];
  return Math.hypot(next.x - first.x, next.y - first.y) <= tolerance;
}
