// Browser entry point: binds the controller to the DOM. All logic lives in
// controller/state/render; this file only moves data into elements.

import { ApiError, CopaClient } from "./api.js";
import { ChatController } from "./controller.js";
import { modelChipLabel, renderBubbles, renderSources } from "./render.js";

const params = new URLSearchParams(window.location.search);
const BASE_URL = params.get("server") ?? "http://127.0.0.1:8470";
const TASK_ID = params.get("task") ?? "truck";

const el = {
  banner: document.getElementById("banner") as HTMLDivElement,
  chip: document.getElementById("model-chip") as HTMLSpanElement,
  messages: document.getElementById("messages") as HTMLDivElement,
  sources: document.getElementById("sources") as HTMLDivElement,
  input: document.getElementById("input") as HTMLInputElement,
  send: document.getElementById("send") as HTMLButtonElement,
  modelFile: document.getElementById("model-file") as HTMLInputElement,
  modelError: document.getElementById("model-error") as HTMLSpanElement,
  retryRow: document.getElementById("retry-row") as HTMLDivElement,
  retryMessage: document.getElementById("retry-message") as HTMLSpanElement,
  retryButton: document.getElementById("retry") as HTMLButtonElement,
  connect: document.getElementById("connect") as HTMLButtonElement,
};

let controller: ChatController | null = null;

function paint(): void {
  const view = controller?.view ?? null;
  el.banner.hidden = !view?.banner && controller !== null;
  if (controller === null) {
    el.banner.hidden = false;
  } else if (view?.banner) {
    el.banner.hidden = false;
    el.banner.querySelector("span")!.textContent = view.banner;
  }

  el.messages.replaceChildren();
  if (view) {
    for (const bubble of renderBubbles(view)) {
      const div = document.createElement("div");
      div.className = `bubble ${bubble.role}${bubble.pending ? " pending" : ""}`;
      const who = document.createElement("strong");
      who.textContent = bubble.speaker;
      const text = document.createElement("span");
      text.textContent = bubble.text;
      div.append(who, text);
      el.messages.append(div);
    }
    el.messages.scrollTop = el.messages.scrollHeight;
  }

  const sources = view ? renderSources(view) : null;
  el.sources.hidden = sources === null;
  if (sources) {
    (el.sources.querySelector(".chunk") as HTMLElement).textContent =
      sources.chunkText;
    (el.sources.querySelector(".chunk-id") as HTMLElement).textContent =
      `${sources.chunkId} (score ${sources.score.toFixed(3)})`;
    (el.sources.querySelector(".diagnosis") as HTMLElement).textContent =
      sources.diagnosisSummary;
  }

  el.chip.textContent = view ? modelChipLabel(view) : "";
  el.modelError.textContent = view?.modelError ?? "";
  el.modelError.hidden = !view?.modelError;

  el.retryRow.hidden = !view?.failedText;
  if (view?.failedMessage) {
    el.retryMessage.textContent = view.failedMessage;
  }

  el.send.disabled =
    controller === null || !controller.canSend(el.input.value);
}

async function connect(): Promise<void> {
  const client = new CopaClient(BASE_URL);
  try {
    controller = await ChatController.start(client, TASK_ID);
    el.banner.hidden = true;
  } catch (err) {
    controller = null;
    el.banner.hidden = false;
    el.banner.querySelector("span")!.textContent =
      err instanceof ApiError
        ? `cannot reach the service at ${BASE_URL}: ${err.message}`
        : String(err);
  }
  paint();
}

async function sendCurrent(): Promise<void> {
  if (!controller || !controller.canSend(el.input.value)) {
    return;
  }
  const text = el.input.value;
  el.input.value = "";
  paint();
  await controller.send(text);
  paint();
}

el.send.addEventListener("click", () => void sendCurrent());
el.input.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") {
    void sendCurrent();
  }
});
el.input.addEventListener("input", paint);
el.retryButton.addEventListener("click", async () => {
  if (controller) {
    await controller.retry();
    paint();
  }
});
el.connect.addEventListener("click", () => void connect());
el.modelFile.addEventListener("change", async () => {
  const file = el.modelFile.files?.[0];
  if (!file || !controller) {
    return;
  }
  let model: unknown;
  try {
    model = JSON.parse(await file.text());
  } catch (err) {
    controller.view = {
      ...controller.view,
      modelError: `not valid JSON: ${err}`,
    };
    paint();
    return;
  }
  await controller.uploadModel(model);
  el.modelFile.value = "";
  paint();
});

void connect();
