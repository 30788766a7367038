/**
 * Page wiring: a draw-a-sketch pane and a text pane, both submitting to
 * the retrieval service and rendering ranked matches as line charts.
 * Clicking a result loads that series onto the canvas as the next query.
 */

import {
  ApiClient,
  ResultItem,
  UnknownTokensError,
  resolveBaseUrl,
} from "./api.js";
import { drawSeries } from "./charts.js";
import {
  SketchState,
  addStrokeSegment,
  clampK,
  clearSketch,
  createSketchState,
  hasSketch,
  loadSeriesIntoSketch,
  sketchPoints,
  sketchRequestPoints,
} from "./sketch.js";

const QUERY_COLOR = "#1d4ed8";
const RESULT_COLOR = "#0f766e";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderSketch(canvas: HTMLCanvasElement, state: SketchState): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#d4d4d8";
  ctx.strokeRect(0.5, 0.5, canvas.width - 1, canvas.height - 1);
  const points = sketchPoints(state);
  if (points.length < 2) return;
  const xs = Array.from(state.columns.keys()).sort((a, b) => a - b);
  ctx.strokeStyle = QUERY_COLOR;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(xs[0], points[0]);
  points.forEach((y, i) => ctx.lineTo(xs[0] + i, y));
  ctx.stroke();
}

function resultCard(
  item: ResultItem,
  query: number[] | null,
  onPick: (item: ResultItem) => void,
): HTMLElement {
  const card = document.createElement("div");
  card.className = "result-card";
  const canvas = document.createElement("canvas");
  canvas.width = 180;
  canvas.height = 90;
  const ctx = canvas.getContext("2d")!;
  if (query) {
    drawSeries(ctx, query, canvas.width, canvas.height, "#cbd5e1", 1);
  }
  drawSeries(ctx, item.series, canvas.width, canvas.height, RESULT_COLOR, 1.5);
  card.appendChild(canvas);

  const meta = document.createElement("div");
  meta.className = "result-meta";
  const labels = item.labels
    ? Object.entries(item.labels)
        .map(([feature, regime]) => `${feature}: ${regime}`)
        .join(" · ")
    : "";
  meta.innerHTML = `<strong>${item.id}</strong> <span>score ${item.score.toFixed(4)}</span>` +
    (labels ? `<br><small>${labels}</small>` : "") +
    (item.caption ? `<br><em>${item.caption}</em>` : "");
  card.appendChild(meta);
  card.title = "click to use this series as the next sketch query";
  card.addEventListener("click", () => onPick(item));
  return card;
}

function main(): void {
  const client = new ApiClient(resolveBaseUrl(window.location));
  const canvas = el<HTMLCanvasElement>("sketch-canvas");
  const sketchStatus = el<HTMLSpanElement>("sketch-status");
  const textStatus = el<HTMLSpanElement>("text-status");
  const resultsPane = el<HTMLDivElement>("results");
  const kInput = el<HTMLInputElement>("k-input");
  const state = createSketchState(Number(kInput.value) || 9);

  let drawing = false;
  let last: { x: number; y: number } | null = null;

  const position = (event: PointerEvent) => {
    const rect = canvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * canvas.width,
      y: ((event.clientY - rect.top) / rect.height) * canvas.height,
    };
  };

  canvas.addEventListener("pointerdown", (event) => {
    drawing = true;
    last = position(event);
    canvas.setPointerCapture(event.pointerId);
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!drawing || !last) return;
    const here = position(event);
    addStrokeSegment(state, last.x, last.y, here.x, here.y);
    last = here;
    renderSketch(canvas, state);
  });
  const stop = () => {
    drawing = false;
    last = null;
  };
  canvas.addEventListener("pointerup", stop);
  canvas.addEventListener("pointerleave", stop);

  const showResults = (items: ResultItem[], query: number[] | null) => {
    resultsPane.replaceChildren(
      ...items.map((item) =>
        resultCard(item, query, (picked) => {
          loadSeriesIntoSketch(state, picked.series, canvas.width, canvas.height);
          renderSketch(canvas, state);
          sketchStatus.textContent = `loaded ${picked.id} as the next sketch query`;
        }),
      ),
    );
  };

  el<HTMLButtonElement>("sketch-submit").addEventListener("click", async () => {
    state.k = clampK(Number(kInput.value));
    kInput.value = String(state.k);
    if (!hasSketch(state)) {
      sketchStatus.textContent = "draw a sketch first";
      return;
    }
    sketchStatus.textContent = "searching…";
    try {
      const response = await client.querySketch(
        sketchRequestPoints(state, canvas.height),
        state.k,
      );
      sketchStatus.textContent = `${response.results.length} matches`;
      showResults(response.results, response.resampled_query);
    } catch (err) {
      if ((err as Error).name === "AbortError") return;
      sketchStatus.textContent = `error: ${(err as Error).message}`;
    }
  });

  el<HTMLButtonElement>("sketch-clear").addEventListener("click", () => {
    clearSketch(state);
    renderSketch(canvas, state);
    sketchStatus.textContent = "";
  });

  el<HTMLButtonElement>("text-submit").addEventListener("click", async () => {
    const text = el<HTMLInputElement>("text-input").value.trim();
    state.k = clampK(Number(kInput.value));
    kInput.value = String(state.k);
    if (!text) {
      textStatus.textContent = "type a description first";
      return;
    }
    textStatus.textContent = "searching…";
    try {
      const response = await client.queryText(text, state.k);
      textStatus.textContent = `${response.results.length} matches`;
      showResults(response.results, null);
    } catch (err) {
      if (err instanceof UnknownTokensError) {
        textStatus.textContent = `unknown words: ${err.tokens.join(", ")}`;
        return;
      }
      if ((err as Error).name === "AbortError") return;
      textStatus.textContent = `error: ${(err as Error).message}`;
    }
  });

  renderSketch(canvas, state);
  client
    .info()
    .then((info) => {
      el<HTMLSpanElement>("service-info").textContent =
        `${info.dataset}: ${info.sketch_index.size} series indexed`;
    })
    .catch(() => {
      el<HTMLSpanElement>("service-info").textContent =
        "service unreachable (set ?api=http://host:port)";
    });
}

main();
