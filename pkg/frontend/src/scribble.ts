/** Operator scribble buffer and the local mask preview.
 *
 * The preview rasterizer duplicates the server's arithmetic operation for
 * operation in IEEE float64 (which is what JavaScript numbers are), so the
 * mask the server stores from a saved ScribbleSet is bit-identical to the
 * preview — the integration test pins that, pixel for pixel.
 */

export type StrokeMode = "paint" | "erase";

export interface Stroke {
  /** polyline in image pixel coordinates. */
  points: Array<{ x: number; y: number }>;
  radius: number;
  mode: StrokeMode;
}

export interface ScribbleSetJson {
  strokes: Array<{
    points: Array<[number, number]>;
    radius: number;
    mode: StrokeMode;
  }>;
}

export function validateStroke(stroke: Stroke): void {
  if (stroke.radius < 1) {
    throw new Error("stroke radius must be >= 1");
  }
  if (stroke.mode !== "paint" && stroke.mode !== "erase") {
    throw new Error(`unknown stroke mode ${JSON.stringify(stroke.mode)}`);
  }
  if (stroke.points.length === 0) {
    throw new Error("stroke needs at least one point");
  }
}

function cloneStroke(stroke: Stroke): Stroke {
  return {
    points: stroke.points.map((p) => ({ x: p.x, y: p.y })),
    radius: stroke.radius,
    mode: stroke.mode,
  };
}

/** Serialize to the gateway's ScribbleSet schema: {strokes: [{points: [[x, y], …], radius, mode}]}. */
export function serializeStrokes(strokes: readonly Stroke[]): ScribbleSetJson {
  return {
    strokes: strokes.map((s) => ({
      points: s.points.map((p): [number, number] => [p.x, p.y]),
      radius: s.radius,
      mode: s.mode,
    })),
  };
}

export function deserializeStrokes(json: ScribbleSetJson): Stroke[] {
  return json.strokes.map((s) => ({
    points: s.points.map(([x, y]) => ({ x, y })),
    radius: s.radius,
    mode: s.mode,
  }));
}

/** Undo/redo buffer for the in-progress scribble set. */
export class ScribbleBuffer {
  private strokes: Stroke[] = [];
  private undone: Stroke[] = [];

  push(stroke: Stroke): void {
    validateStroke(stroke);
    this.strokes.push(cloneStroke(stroke));
    this.undone = [];
  }

  /** Returns false when there was nothing to undo. */
  undo(): boolean {
    const stroke = this.strokes.pop();
    if (stroke === undefined) {
      return false;
    }
    this.undone.push(stroke);
    return true;
  }

  /** Returns false when there was nothing to redo. */
  redo(): boolean {
    const stroke = this.undone.pop();
    if (stroke === undefined) {
      return false;
    }
    this.strokes.push(stroke);
    return true;
  }

  clear(): void {
    this.strokes = [];
    this.undone = [];
  }

  get length(): number {
    return this.strokes.length;
  }

  get isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  get canUndo(): boolean {
    return this.strokes.length > 0;
  }

  get canRedo(): boolean {
    return this.undone.length > 0;
  }

  /** Deep copy of the current strokes, oldest first. */
  snapshot(): Stroke[] {
    return this.strokes.map(cloneStroke);
  }

  toJson(): ScribbleSetJson {
    return serializeStrokes(this.strokes);
  }
}

/**
 * Pixels whose center lies within `radius` of the clamped polyline.
 *
 * Matches the server: points clamp to [0, width-1] x [0, height-1]; a pixel
 * is hit when its squared distance to any segment is <= radius*radius, with
 * the segment parameter t = ((px-x1)*dx + (py-y1)*dy) / len2 clamped to
 * [0, 1]. Every intermediate stays in float64 with the same operation order.
 */
function strokeHits(
  stroke: Stroke,
  width: number,
  height: number,
): Uint8Array {
  const xs = stroke.points.map((p) => Math.min(Math.max(p.x, 0.0), width - 1));
  const ys = stroke.points.map((p) => Math.min(Math.max(p.y, 0.0), height - 1));
  const r2 = stroke.radius * stroke.radius;
  const hit = new Uint8Array(width * height);

  if (xs.length === 1) {
    const x0 = xs[0]!;
    const y0 = ys[0]!;
    for (let py = 0; py < height; py++) {
      for (let px = 0; px < width; px++) {
        const ddx = px - x0;
        const ddy = py - y0;
        if (ddx * ddx + ddy * ddy <= r2) {
          hit[py * width + px] = 1;
        }
      }
    }
    return hit;
  }

  for (let k = 0; k < xs.length - 1; k++) {
    const x1 = xs[k]!;
    const y1 = ys[k]!;
    const x2 = xs[k + 1]!;
    const y2 = ys[k + 1]!;
    const dx = x2 - x1;
    const dy = y2 - y1;
    const len2 = dx * dx + dy * dy;
    for (let py = 0; py < height; py++) {
      for (let px = 0; px < width; px++) {
        let dist2: number;
        if (len2 === 0.0) {
          const ddx = px - x1;
          const ddy = py - y1;
          dist2 = ddx * ddx + ddy * ddy;
        } else {
          let t = ((px - x1) * dx + (py - y1) * dy) / len2;
          t = Math.min(Math.max(t, 0.0), 1.0);
          const ddx = px - (x1 + t * dx);
          const ddy = py - (y1 + t * dy);
          dist2 = ddx * ddx + ddy * ddy;
        }
        if (dist2 <= r2) {
          hit[py * width + px] = 1;
        }
      }
    }
  }
  return hit;
}

/**
 * Apply strokes in order onto an empty canvas: paint sets every pixel within
 * the stroke radius of its polyline, erase clears them. Row-major
 * `Uint8Array` of width*height, 1 = masked.
 */
export function rasterizeStrokes(
  strokes: readonly Stroke[],
  width: number,
  height: number,
): Uint8Array {
  const bits = new Uint8Array(width * height);
  for (const stroke of strokes) {
    validateStroke(stroke);
    const hits = strokeHits(stroke, width, height);
    if (stroke.mode === "paint") {
      for (let i = 0; i < bits.length; i++) {
        if (hits[i]) {
          bits[i] = 1;
        }
      }
    } else {
      for (let i = 0; i < bits.length; i++) {
        if (hits[i]) {
          bits[i] = 0;
        }
      }
    }
  }
  return bits;
}

export function maskArea(bits: Uint8Array): number {
  let area = 0;
  for (let i = 0; i < bits.length; i++) {
    if (bits[i]) {
      area++;
    }
  }
  return area;
}
