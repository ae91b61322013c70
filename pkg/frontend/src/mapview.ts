import { ApiError, type SessionService } from "./api.js";
import { renderMapOverlay, type DrawableImage } from "./render.js";
import type { MapJson } from "./types.js";

export interface MapViewOptions {
  service: SessionService;
  root: HTMLElement;
  loadImage?: (url: string) => Promise<DrawableImage | null>;
}

/** Read-only operator view: the merged importance map as a colored overlay
 * with a threshold slider that re-partitions consensus vs controversial
 * client-side, without refetching. */
export class MapViewer {
  map: MapJson | null = null;

  private readonly service: SessionService;
  private readonly loadImage: (url: string) => Promise<DrawableImage | null>;
  private readonly titleEl: HTMLElement;
  private readonly canvas: HTMLCanvasElement;
  private readonly slider: HTMLInputElement;
  private readonly tauLabel: HTMLElement;
  private readonly summary: HTMLElement;
  private readonly notice: HTMLElement;
  private image: DrawableImage | null = null;
  private tau = 0.8;

  constructor(options: MapViewOptions) {
    this.service = options.service;
    this.loadImage =
      options.loadImage ??
      ((url) =>
        new Promise((resolve) => {
          const img = new Image();
          img.onload = () => resolve(img);
          img.onerror = () => resolve(null);
          img.src = url;
        }));

    const doc = options.root.ownerDocument;
    const root = options.root;
    root.innerHTML = "";
    this.notice = doc.createElement("div");
    this.notice.className = "notice";
    this.notice.hidden = true;
    this.titleEl = doc.createElement("p");
    this.titleEl.className = "question";
    this.canvas = doc.createElement("canvas");
    this.canvas.className = "map-canvas";
    const controls = doc.createElement("div");
    controls.className = "tau-controls";
    this.slider = doc.createElement("input");
    this.slider.type = "range";
    this.slider.min = "0.55";
    this.slider.max = "1";
    this.slider.step = "0.05";
    this.slider.value = String(this.tau);
    this.slider.className = "tau-slider";
    this.tauLabel = doc.createElement("span");
    this.tauLabel.className = "tau-label";
    this.summary = doc.createElement("p");
    this.summary.className = "map-summary";
    controls.append(this.slider, this.tauLabel);
    root.append(this.notice, this.titleEl, this.canvas, controls, this.summary);

    this.slider.addEventListener("input", () => {
      this.setTau(Number(this.slider.value));
    });
  }

  async load(taskId: string, tau = 0.8): Promise<void> {
    this.tau = tau;
    this.slider.value = String(tau);
    this.notice.hidden = true;
    try {
      this.map = await this.service.map(taskId, tau);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.notice.textContent = "No completed sessions for this task yet.";
      } else {
        this.notice.textContent = `Could not load the map: ${
          error instanceof Error ? error.message : String(error)
        }`;
      }
      this.notice.hidden = false;
      return;
    }
    this.titleEl.textContent = `${this.map.question} (${this.map.n_workers} worker${
      this.map.n_workers === 1 ? "" : "s"
    })`;
    this.image = await this.loadImage(this.service.imageUrl(this.map.image_url));
    this.render();
  }

  /** Re-partition and re-paint at a new threshold; purely client-side. */
  setTau(tau: number): void {
    this.tau = tau;
    this.render();
  }

  private render(): void {
    if (!this.map) return;
    const { width, height } = this.map.grid;
    this.canvas.width = width;
    this.canvas.height = height;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const partition = renderMapOverlay(
      ctx,
      this.image,
      width,
      height,
      this.map.scores,
      this.tau,
    );
    this.tauLabel.textContent = `tau = ${this.tau.toFixed(2)}`;
    this.summary.textContent =
      `${partition.important.length} important, ` +
      `${partition.controversial.length} controversial, ` +
      `${partition.unimportant.length} unimportant patches`;
  }
}
