import type { MapScoreJson, RectJson } from "./types.js";

/** The 2D-context surface the renderers need; a real
 * CanvasRenderingContext2D satisfies it, and tests substitute a software
 * framebuffer to sample pixels. */
export interface Drawable2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  fillRect(x: number, y: number, w: number, h: number): void;
  drawImage(image: CanvasImageSource, dx: number, dy: number): void;
}

/** Anything with pixel dimensions we can draw; HTMLImageElement in the
 * browser, a stub in tests. */
export interface DrawableImage {
  width: number;
  height: number;
}

const BACKDROP = "#f2f2f2";

/** Draw the stimulus: the task image with every hidden rect painted fully
 * opaque black, pixel-aligned. Hidden content must not shimmer through. */
export function renderStimulus(
  ctx: Drawable2D,
  image: DrawableImage | null,
  width: number,
  height: number,
  hidden: RectJson[],
): void {
  if (image) {
    ctx.drawImage(image as CanvasImageSource, 0, 0);
  } else {
    ctx.fillStyle = BACKDROP;
    ctx.fillRect(0, 0, width, height);
  }
  ctx.fillStyle = "#000000";
  for (const r of hidden) {
    ctx.fillRect(r.x, r.y, r.w, r.h);
  }
}

export interface AgreementPartition {
  important: MapScoreJson[];
  unimportant: MapScoreJson[];
  controversial: MapScoreJson[];
}

/** Client-side agreement partition, mirroring the service's semantics:
 * score >= tau is consensus-important, (1 - score) >= tau is
 * consensus-unimportant (phrased that way so exact k/n boundary scores
 * land on the right side despite binary floats), the rest controversial. */
export function partitionAgreement(
  scores: MapScoreJson[],
  tau: number,
): AgreementPartition {
  const partition: AgreementPartition = {
    important: [],
    unimportant: [],
    controversial: [],
  };
  for (const entry of scores) {
    if (entry.score >= tau) partition.important.push(entry);
    else if (1 - entry.score >= tau) partition.unimportant.push(entry);
    else partition.controversial.push(entry);
  }
  return partition;
}

export const IMPORTANT_TINT = (score: number): string =>
  `rgba(214, 40, 40, ${(0.3 + 0.4 * score).toFixed(3)})`;
export const CONTROVERSIAL_TINT = "rgba(247, 201, 72, 0.55)";

/** Importance overlay: consensus-important patches tinted red with score-
 * scaled strength, controversial patches amber, consensus-unimportant left
 * untouched. A unanimous map renders as the two-tone red/clear overlay. */
export function renderMapOverlay(
  ctx: Drawable2D,
  image: DrawableImage | null,
  width: number,
  height: number,
  scores: MapScoreJson[],
  tau: number,
): AgreementPartition {
  if (image) {
    ctx.drawImage(image as CanvasImageSource, 0, 0);
  } else {
    ctx.fillStyle = BACKDROP;
    ctx.fillRect(0, 0, width, height);
  }
  const partition = partitionAgreement(scores, tau);
  for (const entry of partition.important) {
    ctx.fillStyle = IMPORTANT_TINT(entry.score);
    ctx.fillRect(entry.rect.x, entry.rect.y, entry.rect.w, entry.rect.h);
  }
  ctx.fillStyle = CONTROVERSIAL_TINT;
  for (const entry of partition.controversial) {
    ctx.fillRect(entry.rect.x, entry.rect.y, entry.rect.w, entry.rect.h);
  }
  return partition;
}
