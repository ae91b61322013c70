import { ApiError, type SessionService } from "./api.js";
import { renderStimulus, type DrawableImage } from "./render.js";
import type { SessionState, StimulusJson } from "./types.js";

export interface SessionClientState {
  sessionId: string | null;
  lastStimulus: StimulusJson | null;
  inFlight: boolean;
  done: boolean;
}

export interface AnnotatorOptions {
  service: SessionService;
  root: HTMLElement;
  /** Where Y/N keystrokes are listened for; defaults to the document. */
  keyboardTarget?: EventTarget;
  /** Image loader, injectable because test DOMs cannot decode PNGs. */
  loadImage?: (url: string) => Promise<DrawableImage | null>;
  /** Monotonic clock in milliseconds for per-question latency. */
  now?: () => number;
}

function loadImageElement(url: string): Promise<DrawableImage | null> {
  return new Promise((resolve) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => resolve(null);
    img.src = url;
  });
}

/** The annotator screen: question, blacked-out image, and exactly two
 * response buttons (Y/N keystrokes mirror them). One answer request is in
 * flight at a time; buttons are disabled while it is. */
export class AnnotatorApp {
  readonly state: SessionClientState = {
    sessionId: null,
    lastStimulus: null,
    inFlight: false,
    done: false,
  };

  private readonly service: SessionService;
  private readonly loadImage: (url: string) => Promise<DrawableImage | null>;
  private readonly now: () => number;
  private readonly keyboardTarget: EventTarget;
  private readonly keyHandler: (event: Event) => void;

  private readonly banner: HTMLElement;
  private readonly bannerText: HTMLElement;
  private readonly retryButton: HTMLButtonElement;
  private readonly questionEl: HTMLElement;
  private readonly canvas: HTMLCanvasElement;
  private readonly progressFill: HTMLElement;
  private readonly progressLabel: HTMLElement;
  private readonly canButton: HTMLButtonElement;
  private readonly cannotButton: HTMLButtonElement;
  private readonly doneScreen: HTMLElement;
  private readonly doneCount: HTMLElement;

  private image: DrawableImage | null = null;
  private shownAt = 0;
  private startArgs: [string, string] | null = null;
  private settled: Promise<void> = Promise.resolve();

  constructor(options: AnnotatorOptions) {
    this.service = options.service;
    this.loadImage = options.loadImage ?? loadImageElement;
    this.now = options.now ?? (() => performance.now());

    const doc = options.root.ownerDocument;
    const el = <K extends keyof HTMLElementTagNameMap>(
      tag: K,
      className: string,
      parent: Element,
    ): HTMLElementTagNameMap[K] => {
      const node = doc.createElement(tag);
      node.className = className;
      parent.appendChild(node);
      return node;
    };

    const root = options.root;
    root.innerHTML = "";
    this.banner = el("div", "banner", root);
    this.banner.hidden = true;
    this.bannerText = el("span", "banner-text", this.banner);
    this.retryButton = el("button", "banner-retry", this.banner);
    this.retryButton.textContent = "Retry";
    this.retryButton.addEventListener("click", () => {
      if (this.startArgs) void this.start(...this.startArgs);
    });

    this.questionEl = el("p", "question", root);
    const stage = el("div", "stage", root);
    this.canvas = el("canvas", "stimulus", stage);
    const progress = el("div", "progress", root);
    const track = el("div", "progress-track", progress);
    this.progressFill = el("div", "progress-fill", track);
    this.progressLabel = el("span", "progress-label", progress);

    const controls = el("div", "controls", root);
    this.canButton = el("button", "answer answer-can", controls);
    this.canButton.textContent = "Yes, I can answer (Y)";
    this.cannotButton = el("button", "answer answer-cannot", controls);
    this.cannotButton.textContent = "No, I cannot (N)";
    this.canButton.addEventListener("click", () => void this.respond("can"));
    this.cannotButton.addEventListener("click", () => void this.respond("cannot"));

    this.doneScreen = el("div", "done", root);
    this.doneScreen.hidden = true;
    el("h2", "done-title", this.doneScreen).textContent = "All done";
    this.doneCount = el("p", "done-count", this.doneScreen);

    this.keyboardTarget = options.keyboardTarget ?? doc;
    this.keyHandler = (event) => {
      const key = (event as KeyboardEvent).key;
      if (key === "y" || key === "Y") void this.respond("can");
      else if (key === "n" || key === "N") void this.respond("cannot");
    };
    this.keyboardTarget.addEventListener("keydown", this.keyHandler);
  }

  dispose(): void {
    this.keyboardTarget.removeEventListener("keydown", this.keyHandler);
  }

  /** Resolves when the in-flight respond/start call (if any) has settled;
   * lets scripted drivers await keystroke side effects. */
  idle(): Promise<void> {
    return this.settled;
  }

  async start(taskId: string, workerId: string): Promise<void> {
    this.startArgs = [taskId, workerId];
    const task = this.doStart(taskId, workerId);
    this.settled = task;
    await task;
  }

  private async doStart(taskId: string, workerId: string): Promise<void> {
    this.hideBanner();
    try {
      const opened = await this.service.openSession(taskId, workerId);
      this.state.sessionId = opened.session_id;
      this.image = await this.loadImage(
        this.service.imageUrl(opened.stimulus.image_url),
      );
      this.showStimulus(opened.stimulus);
    } catch (error) {
      this.showBanner(`Could not start the session: ${describe(error)}`);
    }
  }

  async respond(choice: "can" | "cannot"): Promise<void> {
    if (this.state.inFlight || this.state.done || !this.state.sessionId) return;
    const stimulus = this.state.lastStimulus;
    if (!stimulus) return;
    const task = this.doRespond(choice, stimulus);
    this.settled = task;
    await task;
  }

  private async doRespond(
    choice: "can" | "cannot",
    stimulus: StimulusJson,
  ): Promise<void> {
    const latencyS = Math.max(0, (this.now() - this.shownAt) / 1000);
    this.state.inFlight = true;
    this.setButtonsEnabled(false);
    try {
      const outcome = await this.service.answer(
        this.state.sessionId!,
        choice,
        latencyS,
        stimulus.punch_seq,
      );
      this.applyOutcome(outcome);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // someone (a double-click, another tab) answered this question
        // already; silently resync to the current stimulus
        try {
          this.applyOutcome(await this.service.stimulus(this.state.sessionId!));
        } catch (refetchError) {
          this.showBanner(`Lost the session: ${describe(refetchError)}`);
        }
      } else {
        this.showBanner(`Could not submit the answer: ${describe(error)}`);
      }
    } finally {
      this.state.inFlight = false;
      if (!this.state.done) this.setButtonsEnabled(true);
    }
  }

  private applyOutcome(outcome: SessionState): void {
    if (outcome.status === "done") {
      this.state.done = true;
      this.state.lastStimulus = null;
      this.doneCount.textContent = `${outcome.questions} questions answered. Thank you!`;
      this.doneScreen.hidden = false;
      this.canvas.hidden = true;
      this.canButton.hidden = true;
      this.cannotButton.hidden = true;
      return;
    }
    this.showStimulus(outcome.stimulus);
  }

  private showStimulus(stimulus: StimulusJson): void {
    this.state.lastStimulus = stimulus;
    this.questionEl.textContent = stimulus.question;
    if (this.image) {
      this.canvas.width = this.image.width;
      this.canvas.height = this.image.height;
    }
    const ctx = this.canvas.getContext("2d");
    if (ctx) {
      renderStimulus(
        ctx,
        this.image,
        this.canvas.width,
        this.canvas.height,
        stimulus.hidden,
      );
    }
    const { answered, total } = stimulus.progress;
    if (total !== null) {
      this.progressLabel.textContent = `${answered} / ${total}`;
      this.progressFill.style.width = `${Math.round((100 * answered) / Math.max(1, total))}%`;
    } else {
      // adaptive grouping cannot know the total in advance
      this.progressLabel.textContent = `${answered} answered`;
      this.progressFill.style.width = "100%";
    }
    this.shownAt = this.now();
  }

  private setButtonsEnabled(enabled: boolean): void {
    this.canButton.disabled = !enabled;
    this.cannotButton.disabled = !enabled;
  }

  private showBanner(message: string): void {
    this.bannerText.textContent = message;
    this.banner.hidden = false;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.status} ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}
