// Thin client for the trainer-service HTTP API.

import type { Pixel } from "./rasterize.js";

export interface ImageInfo {
  image_id: string;
  width: number;
  height: number;
}

export interface StatusInfo {
  iteration: number;
  samples_drawn_total: number;
  hard_buffer_size: number;
  validation_accuracy: number;
  best_validation_accuracy: number;
  model_revision: number;
  warmup_remaining: number;
}

export interface AnnotatedPixel {
  x: number;
  y: number;
  class: number;
  seq: number;
}

export type PredictionResponse =
  | { kind: "map"; blob: Blob; revision: number; stride: number }
  | { kind: "warmup" };

export class ApiClient {
  constructor(private base: string = "") {}

  async listImages(): Promise<ImageInfo[]> {
    const r = await fetch(`${this.base}/images`);
    if (!r.ok) throw new Error(`GET /images: ${r.status}`);
    return (await r.json()).images;
  }

  imageUrl(imageId: string): string {
    return `${this.base}/images/${imageId}`;
  }

  async postAnnotation(
    imageId: string,
    classLabel: number,
    pixels: Pixel[],
    author: string,
  ): Promise<number> {
    const r = await fetch(`${this.base}/annotations`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        image_id: imageId,
        class: classLabel,
        pixels,
        author,
      }),
    });
    if (!r.ok) throw new Error(`POST /annotations: ${r.status}`);
    return (await r.json()).seq;
  }

  async getAnnotations(imageId: string): Promise<AnnotatedPixel[]> {
    const r = await fetch(
      `${this.base}/annotations?image_id=${encodeURIComponent(imageId)}`,
    );
    if (!r.ok) throw new Error(`GET /annotations: ${r.status}`);
    return (await r.json()).pixels;
  }

  async getPrediction(imageId: string): Promise<PredictionResponse> {
    const r = await fetch(`${this.base}/predictions/${imageId}`);
    if (r.status === 409) return { kind: "warmup" };
    if (!r.ok) throw new Error(`GET /predictions: ${r.status}`);
    return {
      kind: "map",
      blob: await r.blob(),
      revision: Number(r.headers.get("X-Model-Revision") ?? -1),
      stride: Number(r.headers.get("X-Stride") ?? 1),
    };
  }

  async getStatus(): Promise<StatusInfo> {
    const r = await fetch(`${this.base}/status`);
    if (!r.ok) throw new Error(`GET /status: ${r.status}`);
    return await r.json();
  }
}
