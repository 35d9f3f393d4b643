// Probability-overlay state: keeps the latest fetched map, repaints
// only when the model revision increases, and backs off polling on
// failure.  The pixel store is DOM-free so tests can compare it
// against a decoded fixture PNG directly.

export const POLL_INTERVAL_MS = 1000;
export const MAX_BACKOFF_MS = 10000;

export interface OverlayFrame {
  /** grayscale bytes, one per pixel: round(255 * p(membrane)) */
  values: Uint8Array;
  width: number;
  height: number;
  revision: number;
  stride: number;
}

export type OverlayPhase = "empty" | "warmup" | "live" | "stale";

export class OverlayState {
  frame: OverlayFrame | null = null;
  phase: OverlayPhase = "empty";
  repaints = 0;
  private backoffMs = POLL_INTERVAL_MS;

  get lastSeenRevision(): number {
    return this.frame ? this.frame.revision : -1;
  }

  /** Next poll delay; grows only while requests fail. */
  get nextDelayMs(): number {
    return this.backoffMs;
  }

  /** A fetched map; repaint only if the revision increased. */
  onFrame(frame: OverlayFrame): boolean {
    this.backoffMs = POLL_INTERVAL_MS;
    if (frame.revision <= this.lastSeenRevision) {
      this.phase = "live";
      return false;
    }
    this.frame = frame;
    this.phase = "live";
    this.repaints++;
    return true;
  }

  /** 409 during warm-up: not an error, keep whatever we had. */
  onWarmup(): void {
    this.backoffMs = POLL_INTERVAL_MS;
    if (this.phase === "empty" || this.phase === "warmup") {
      this.phase = "warmup";
    }
  }

  /** Network failure: show a stale badge and back off. */
  onError(): void {
    if (this.frame) this.phase = "stale";
    this.backoffMs = Math.min(this.backoffMs * 2, MAX_BACKOFF_MS);
  }

  /**
   * RGBA pixels for the overlay layer at a given opacity: membrane
   * probability in red, alpha proportional to probability.  At
   * opacity 1 the alpha channel equals the fetched PNG bytes exactly.
   */
  rgba(opacity: number): Uint8ClampedArray {
    if (!this.frame) return new Uint8ClampedArray(0);
    const { values, width, height } = this.frame;
    const out = new Uint8ClampedArray(width * height * 4);
    const op = Math.min(1, Math.max(0, opacity));
    for (let i = 0; i < values.length; i++) {
      out[4 * i] = 255;
      out[4 * i + 3] = Math.round(values[i] * op);
    }
    return out;
  }
}
