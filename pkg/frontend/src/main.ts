// Browser entry point: three stacked canvas layers (image below,
// annotations above it, probability overlay on top), brush/eraser
// tools, class radios, opacity sliders, and prediction polling.

import { ApiClient } from "./api.js";
import { OverlayState, type OverlayFrame } from "./overlay.js";
import { rasterizeStroke, type Point } from "./rasterize.js";

const MEMBRANE = 1;
const NON_MEMBRANE = 0;
// fixed palette: class 1 red, class 0 green
const CLASS_COLORS: Record<number, [number, number, number]> = {
  [MEMBRANE]: [255, 0, 0],
  [NON_MEMBRANE]: [0, 200, 0],
};

interface CanvasState {
  imageId: string;
  width: number;
  height: number;
  activeClass: number;
  brushRadius: number;
  opacities: [number, number, number]; // image, annotations, overlay
}

class AnnotatorApp {
  private api = new ApiClient("");
  private overlay = new OverlayState();
  private state: CanvasState | null = null;
  private layers: Record<string, HTMLCanvasElement> = {};
  // local view of labeled pixels, reconciled against the server
  private labels = new Map<number, number>();
  private path: Point[] = [];
  private painting = false;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private pollInFlight = false;

  async start(root: HTMLElement): Promise<void> {
    const images = await this.api.listImages();
    if (!images.length) {
      root.textContent = "no images served";
      return;
    }
    const info = images[0];
    this.state = {
      imageId: info.image_id,
      width: info.width,
      height: info.height,
      activeClass: MEMBRANE,
      brushRadius: 3,
      opacities: [1, 1, 0.6],
    };
    this.buildDom(root);
    await this.loadBaseImage();
    await this.reconcile();
    this.schedulePoll(0);
  }

  private buildDom(root: HTMLElement): void {
    const s = this.state!;
    const stack = document.createElement("div");
    stack.style.position = "relative";
    stack.style.width = `${s.width}px`;
    stack.style.height = `${s.height}px`;
    for (const name of ["image", "annotations", "overlay"]) {
      const canvas = document.createElement("canvas");
      canvas.width = s.width;
      canvas.height = s.height;
      canvas.style.position = "absolute";
      canvas.style.left = "0";
      canvas.style.top = "0";
      stack.appendChild(canvas);
      this.layers[name] = canvas;
    }
    root.appendChild(stack);
    this.buildControls(root);

    const top = this.layers["overlay"];
    top.addEventListener("pointerdown", (e) => {
      this.painting = true;
      this.path = [this.eventPoint(e)];
    });
    top.addEventListener("pointermove", (e) => {
      if (this.painting) this.path.push(this.eventPoint(e));
    });
    top.addEventListener("pointerup", () => void this.finishStroke());
    top.addEventListener("pointerleave", () => void this.finishStroke());
  }

  private buildControls(root: HTMLElement): void {
    const s = this.state!;
    const bar = document.createElement("div");
    for (const [label, cls] of [
      ["membrane", MEMBRANE],
      ["non-membrane", NON_MEMBRANE],
    ] as const) {
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = "cls";
      radio.checked = cls === s.activeClass;
      radio.addEventListener("change", () => (s.activeClass = cls));
      const span = document.createElement("label");
      span.append(radio, label);
      bar.appendChild(span);
    }
    const radius = document.createElement("input");
    radius.type = "range";
    radius.min = "1";
    radius.max = "15";
    radius.value = String(s.brushRadius);
    radius.addEventListener("input", () => {
      s.brushRadius = Math.max(1, Number(radius.value));
    });
    bar.appendChild(radius);
    (["image", "annotations", "overlay"] as const).forEach((name, i) => {
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = "0";
      slider.max = "100";
      slider.value = String(s.opacities[i] * 100);
      slider.title = `${name} opacity`;
      slider.addEventListener("input", () => {
        s.opacities[i] = Number(slider.value) / 100;
        this.repaintAll();
      });
      bar.appendChild(slider);
    });
    const status = document.createElement("span");
    status.id = "status-badge";
    bar.appendChild(status);
    root.appendChild(bar);
  }

  private eventPoint(e: PointerEvent): Point {
    const rect = this.layers["overlay"].getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private async loadBaseImage(): Promise<void> {
    const s = this.state!;
    const img = new Image();
    img.src = this.api.imageUrl(s.imageId);
    await img.decode();
    const ctx = this.layers["image"].getContext("2d")!;
    ctx.globalAlpha = s.opacities[0];
    ctx.drawImage(img, 0, 0);
  }

  private async finishStroke(): Promise<void> {
    if (!this.painting || !this.state) return;
    this.painting = false;
    const s = this.state;
    const pixels = rasterizeStroke(this.path, s.brushRadius, s.width, s.height);
    this.path = [];
    if (!pixels.length) return;
    // optimistic paint, rolled back by reconcile() on rejection
    for (const [x, y] of pixels) this.labels.set(y * s.width + x, s.activeClass);
    this.repaintAnnotations();
    try {
      await this.api.postAnnotation(s.imageId, s.activeClass, pixels, "browser");
    } catch (err) {
      this.badge(`stroke rejected: ${err}`);
    }
    await this.reconcile();
  }

  private async reconcile(): Promise<void> {
    const s = this.state!;
    const pixels = await this.api.getAnnotations(s.imageId);
    this.labels.clear();
    for (const p of pixels) this.labels.set(p.y * s.width + p.x, p.class);
    this.repaintAnnotations();
  }

  private repaintAnnotations(): void {
    const s = this.state!;
    const ctx = this.layers["annotations"].getContext("2d")!;
    const data = ctx.createImageData(s.width, s.height);
    const alpha = Math.round(255 * s.opacities[1]);
    for (const [index, cls] of this.labels) {
      const [r, g, b] = CLASS_COLORS[cls];
      data.data[4 * index] = r;
      data.data[4 * index + 1] = g;
      data.data[4 * index + 2] = b;
      data.data[4 * index + 3] = alpha;
    }
    ctx.putImageData(data, 0, 0);
  }

  private repaintOverlay(): void {
    const s = this.state!;
    if (!this.overlay.frame) return;
    const rgba = this.overlay.rgba(s.opacities[2]);
    const ctx = this.layers["overlay"].getContext("2d")!;
    ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), s.width, s.height), 0, 0);
  }

  private repaintAll(): void {
    void this.loadBaseImage();
    this.repaintAnnotations();
    this.repaintOverlay();
  }

  private badge(text: string): void {
    const el = document.getElementById("status-badge");
    if (el) el.textContent = text;
  }

  private schedulePoll(delayMs: number): void {
    if (this.pollTimer) clearTimeout(this.pollTimer);
    this.pollTimer = setTimeout(() => void this.poll(), delayMs);
  }

  private async poll(): Promise<void> {
    if (this.pollInFlight || !this.state) return;
    this.pollInFlight = true;
    try {
      const res = await this.api.getPrediction(this.state.imageId);
      if (res.kind === "warmup") {
        this.overlay.onWarmup();
        const status = await this.api.getStatus();
        this.badge(`warming up: ${status.warmup_remaining} samples to go`);
      } else {
        const frame = await this.decodeFrame(res.blob, res.revision, res.stride);
        if (this.overlay.onFrame(frame)) this.repaintOverlay();
        this.badge(`revision ${this.overlay.lastSeenRevision}`);
      }
    } catch {
      this.overlay.onError();
      this.badge("overlay stale (retrying)");
    } finally {
      this.pollInFlight = false;
      this.schedulePoll(this.overlay.nextDelayMs);
    }
  }

  private async decodeFrame(
    blob: Blob,
    revision: number,
    stride: number,
  ): Promise<OverlayFrame> {
    const s = this.state!;
    const bitmap = await createImageBitmap(blob);
    const scratch = document.createElement("canvas");
    scratch.width = s.width;
    scratch.height = s.height;
    const ctx = scratch.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    const rgba = ctx.getImageData(0, 0, s.width, s.height).data;
    const values = new Uint8Array(s.width * s.height);
    for (let i = 0; i < values.length; i++) values[i] = rgba[4 * i];
    return { values, width: s.width, height: s.height, revision, stride };
  }
}

const root = document.getElementById("app");
if (root) void new AnnotatorApp().start(root);
