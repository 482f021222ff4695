/**
 * DOM wiring for the click-to-reveal page.  Everything interesting lives in
 * the pure modules (state, controller, coords); this file only renders a
 * TrialView into elements and forwards events.
 *
 * Query parameters:
 *   api=http://host:port   service base URL (default http://localhost:8765)
 *   set=<stimulus_set_id>  stimulus set to request (default "default")
 *   participant=<code>     participant code (default "anonymous")
 *   seed=<int>             optional session seed for reproducible ordering
 *   scale=<float>          CSS pixels per image pixel (default 2; at 96 dpi
 *                          and 57 cm viewing distance, a 64 px stimulus at
 *                          scale 2 spans about 128 px = 3.4 cm = 3.4 visual
 *                          degrees; raise to ~2.7 for the 4.5 degree layout)
 *   fixture=1              run against the embedded in-memory service
 */

import { ExperimentApi } from "./api.js";
import type { ApiLike } from "./controller.js";
import { ExperimentController } from "./controller.js";
import { cssToImage } from "./coords.js";
import { FixtureApi } from "./fixture.js";
import type { PatchPlacement } from "./state.js";

interface Elements {
  status: HTMLElement;
  progress: HTMLElement;
  canvas: HTMLCanvasElement;
  choices: HTMLElement;
  breakScreen: HTMLElement;
  breakButton: HTMLButtonElement;
  errorBar: HTMLElement;
  errorText: HTMLElement;
  retryButton: HTMLButtonElement;
}

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el;
}

const imageCache = new Map<string, Promise<HTMLImageElement>>();

function loadPng(pngB64: string): Promise<HTMLImageElement> {
  let cached = imageCache.get(pngB64);
  if (cached === undefined) {
    cached = new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve(img);
      img.onerror = () => reject(new Error("failed to decode image"));
      img.src = `data:image/png;base64,${pngB64}`;
    });
    imageCache.set(pngB64, cached);
  }
  return cached;
}

export interface App {
  els: Elements;
  render: () => void;
}

export function wireApp(root: Document, scale: number, controller: ExperimentController): App {
  const els: Elements = {
    status: grab("status"),
    progress: grab("progress"),
    canvas: grab("stimulus") as HTMLCanvasElement,
    choices: grab("choices"),
    breakScreen: grab("break-screen"),
    breakButton: grab("break-button") as HTMLButtonElement,
    errorBar: grab("error-bar"),
    errorText: grab("error-text"),
    retryButton: grab("retry-button") as HTMLButtonElement,
  };

  let renderEpoch = 0;

  async function drawCanvas(): Promise<void> {
    const trial = controller.view.trial;
    if (trial === null) return;
    const epoch = ++renderEpoch;
    const ctx = els.canvas.getContext("2d");
    if (ctx === null) return;
    els.canvas.width = trial.width;
    els.canvas.height = trial.height;
    els.canvas.style.width = `${trial.width * scale}px`;
    els.canvas.style.height = `${trial.height * scale}px`;
    const base = await loadPng(trial.image_png_b64);
    if (epoch !== renderEpoch) return;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(base, 0, 0);
    const patches: PatchPlacement[] = controller.view.patches;
    for (const patch of patches) {
      const img = await loadPng(patch.pngB64);
      if (epoch !== renderEpoch) return;
      ctx.drawImage(img, patch.x0, patch.y0);
    }
  }

  function render(): void {
    const view = controller.view;
    const inTrial = view.phase === "trial";
    els.breakScreen.hidden = view.phase !== "break";
    els.canvas.hidden = !inTrial;
    els.choices.hidden = !inTrial;
    els.errorBar.hidden = view.lastError === null;
    if (view.lastError !== null) els.errorText.textContent = view.lastError;

    if (view.phase === "done") {
      els.status.textContent = `Session complete. ${view.completed ?? 0} trials recorded. Thank you!`;
      els.progress.textContent = "";
      return;
    }
    if (view.phase === "loading") {
      els.status.textContent = "Loading next trial...";
      return;
    }
    if (view.phase === "load-error") {
      els.status.textContent = "Could not reach the experiment server.";
      return;
    }
    if (view.phase === "break") {
      els.status.textContent = "Block complete.";
      els.progress.textContent = "";
      return;
    }
    const trial = view.trial;
    if (trial === null) return;
    const blocks = controller.session?.block_count ?? 1;
    els.status.textContent =
      "Click the image to reveal small regions, then pick the expression. " +
      "Make as few clicks as possible.";
    els.progress.textContent =
      `Trial ${trial.cursor + 1} of ${trial.n_trials}` +
      ` | block ${trial.block_index + 1} of ${blocks}` +
      ` | clicks this trial: ${view.clickCount}`;

    els.choices.replaceChildren();
    for (const label of trial.option_pair) {
      const button = root.createElement("button");
      button.textContent = label;
      button.className = "choice";
      button.disabled = view.pendingChoice !== null;
      button.onclick = () => {
        void controller.choose(label).then(render);
      };
      els.choices.appendChild(button);
    }
    void drawCanvas();
  }

  els.canvas.addEventListener("click", (event: MouseEvent) => {
    const trial = controller.view.trial;
    if (trial === null) return;
    const rect = els.canvas.getBoundingClientRect();
    const point = cssToImage(rect, event.clientX, event.clientY, trial.width, trial.height);
    if (point === null) return;
    void controller.clickAt(point.x, point.y).then(render);
  });

  els.breakButton.onclick = () => {
    controller.beginTrialAfterBreak();
    render();
  };

  els.retryButton.onclick = () => {
    void controller.retry().then(render);
  };

  render();
  return { els, render };
}

export async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const scale = Number(params.get("scale") ?? "2");
  const api: ApiLike =
    params.get("fixture") === "1"
      ? new FixtureApi()
      : new ExperimentApi(params.get("api") ?? "http://localhost:8765");
  const controller = new ExperimentController(api);
  const app = wireApp(document, Number.isFinite(scale) && scale > 0 ? scale : 2, controller);

  const seedText = params.get("seed");
  await controller.start(
    params.get("participant") ?? "anonymous",
    params.get("set") ?? "default",
    seedText === null ? undefined : Number(seedText),
  );
  app.render();
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  void main();
}
