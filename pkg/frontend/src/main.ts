import { PunchholeApi } from "./api.js";
import { AnnotatorApp } from "./annotator.js";
import { MapViewer } from "./mapview.js";

function landing(root: HTMLElement): void {
  root.innerHTML = `
    <div class="landing">
      <h1>punchhole</h1>
      <p>
        Parts of the image will be blacked out, one patch group at a time.
        Look at what remains and answer the question with the two buttons
        (or the <b>Y</b> / <b>N</b> keys): can you still answer it? There
        are no wrong answers; respond with your honest read.
      </p>
      <form class="start-form">
        <label>Task id <input name="task" required></label>
        <label>Worker id <input name="worker" value="anonymous"></label>
        <button type="submit" name="mode" value="annotate">Start annotating</button>
        <button type="submit" name="mode" value="map">View map</button>
      </form>
    </div>`;
  const form = root.querySelector("form")!;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const mode = (event as SubmitEvent).submitter?.getAttribute("value") ?? "annotate";
    const params = new URLSearchParams({
      view: mode,
      task: String(data.get("task") ?? ""),
      worker: String(data.get("worker") ?? "anonymous"),
    });
    window.location.search = params.toString();
  });
}

export function boot(root: HTMLElement): void {
  const params = new URLSearchParams(window.location.search);
  const task = params.get("task");
  const view = params.get("view") ?? "annotate";
  const service = new PunchholeApi("");
  if (!task) {
    landing(root);
    return;
  }
  if (view === "map") {
    const viewer = new MapViewer({ service, root });
    void viewer.load(task, Number(params.get("tau") ?? "0.8"));
    return;
  }
  const app = new AnnotatorApp({ service, root });
  void app.start(task, params.get("worker") ?? "anonymous");
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot(document.getElementById("app")!);
}
