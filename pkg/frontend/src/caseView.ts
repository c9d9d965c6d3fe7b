// Four-panel case screen: RRI viewer, prediction card, dual-explanation
// overlays with clickable discrepancy regions, and the contestation chat.

import { ApiClient } from "./api";
import { drawLineChart, drawOverlays } from "./chart";
import { hitTestRegions, regionRects } from "./chartGeometry";
import { wireChat } from "./chat";
import type { CaseDoc, DiagnosisBundle, HrvFeatures } from "./types";

const OVERRIDE_WINDOW_MS = 24 * 3600 * 1000;

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function formatMetric(name: string, value: number | null,
                             units: Record<string, string>): string {
  if (value === null) return "n/a";
  const unit = units[name] ?? "";
  const digits = name === "lf_hf_ratio" ? 3 : 1;
  const shown = name === "n_beats" ? String(value) : value.toFixed(digits);
  return unit && name !== "n_beats" ? `${shown} ${unit}` : shown;
}

export function hrvTable(features: HrvFeatures, caption: string): HTMLTableElement {
  const table = el("table", "hrv-table");
  table.createCaption().textContent = caption;
  const order = ["mean_rr", "rmssd", "sdnn", "pnn50", "lf_power", "hf_power",
                 "lf_hf_ratio", "n_beats"] as const;
  for (const name of order) {
    const row = table.insertRow();
    row.insertCell().textContent = name;
    row.insertCell().textContent =
      formatMetric(name, features[name] as number | null, features.units);
  }
  return table;
}

function rriPanel(bundle: DiagnosisBundle): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = "rri";
  panel.appendChild(el("h2", undefined, "RRI time series"));
  const canvas = el("canvas", "rri-canvas");
  canvas.width = 760;
  canvas.height = 180;
  panel.appendChild(canvas);
  drawLineChart(canvas, bundle.window_rri, { yLabel: "ms" });
  panel.appendChild(el("div", "rri-meta",
                       `window of ${bundle.window_rri.length} beats starting at `
                       + `beat ${bundle.window_start} of session ${bundle.session_id}`));
  return panel;
}

function predictionPanel(doc: CaseDoc, bundle: DiagnosisBundle): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = "prediction";
  panel.appendChild(el("h2", undefined, "Diagnosis"));
  panel.appendChild(el("div", `prediction-label ${bundle.prediction}`,
                       bundle.prediction));
  panel.appendChild(el("div", "prediction-prob",
                       `${(bundle.probability * 100).toFixed(1)}% treatment probability`));
  if (bundle.flagged) {
    panel.appendChild(el("span", "badge priority-review", "priority review"));
  }
  panel.appendChild(hrvTable(bundle.f_r, "Whole-recording HRV"));
  return panel;
}

function explanationPanel(bundle: DiagnosisBundle): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = "explanation";
  panel.appendChild(el("h2", undefined, "Self-adversarial explanations"))
  const toggles = el("div", "overlay-toggles");
  const attnToggle = el("input") as HTMLInputElement;
  attnToggle.type = "checkbox";
  attnToggle.checked = true;
  attnToggle.className = "toggle-attn";
  const gradToggle = el("input") as HTMLInputElement;
  gradToggle.type = "checkbox";
  gradToggle.checked = true;
  gradToggle.className = "toggle-grad";
  const attnLabel = el("label", "legend-attn", " attention map");
  attnLabel.prepend(attnToggle);
  const gradLabel = el("label", "legend-grad", " gradient map");
  gradLabel.prepend(gradToggle);
  toggles.append(attnLabel, gradLabel);
  panel.appendChild(toggles);

  const wrap = el("div", "overlay-wrap");
  const canvas = el("canvas", "overlay-canvas");
  canvas.width = 760;
  canvas.height = 170;
  wrap.appendChild(canvas);
  const regionLayer = el("div", "region-layer");
  wrap.appendChild(regionLayer);
  panel.appendChild(wrap);
  const detail = el("div", "region-detail");
  detail.hidden = true;
  panel.appendChild(detail);

  const redraw = () => {
    const handle = drawOverlays(canvas, [
      { values: bundle.sae.e_attn, color: "#7b1fa2", visible: attnToggle.checked },
      { values: bundle.sae.e_grad, color: "#e65100", visible: gradToggle.checked },
    ]);
    canvas.dataset.attnVisible = String(attnToggle.checked);
    canvas.dataset.gradVisible = String(gradToggle.checked);
    return handle;
  };
  const handle = redraw();
  attnToggle.addEventListener("change", redraw);
  gradToggle.addEventListener("change", redraw);

  const rects = regionRects(bundle.sae.regions, handle.xScale);
  rects.forEach((rect) => {
    const region = bundle.sae.regions[rect.regionIndex];
    const span = el("div", "region-span");
    span.dataset.regionIndex = String(rect.regionIndex);
    span.style.left = `${rect.x}px`;
    span.style.width = `${rect.width}px`;
    span.title = `region ${rect.regionIndex + 1}: beats ${region.start}-${region.end}`;
    span.addEventListener("click", () => {
      detail.hidden = false;
      detail.replaceChildren(hrvTable(
        bundle.f_d[rect.regionIndex],
        `Region ${rect.regionIndex + 1} (window beats ${region.start}-${region.end})`));
      regionLayer.querySelectorAll(".region-span.selected")
        .forEach((other) => other.classList.remove("selected"));
      span.classList.add("selected");
    });
    regionLayer.appendChild(span);
  });
  // clicking the canvas routes through the same hit testing
  canvas.addEventListener("click", (event) => {
    const index = hitTestRegions((event as MouseEvent).offsetX, rects);
    if (index !== null) {
      (regionLayer.children[index] as HTMLElement).click();
    }
  });
  return panel;
}

export interface RenderOptions {
  client?: ApiClient;
  now?: number;          // ms epoch; defaults to Date.now()
  truthLabel?: string;   // when known offline, colors retained errors red
}

export function overrideAllowed(doc: CaseDoc, nowMs: number): boolean {
  const c = doc.case;
  if (c.decision_source === "clinician_override") return false;
  if (c.status !== "finalized") return true;
  if (c.finalized_at === null) return true;
  return nowMs - c.finalized_at * 1000 <= OVERRIDE_WINDOW_MS;
}

export function decisionBanner(doc: CaseDoc, truthLabel?: string): HTMLElement | null {
  const c = doc.case;
  if (c.status !== "finalized" || !c.final_decision) return null;
  const retained = c.final_decision === c.baseline_prediction;
  const banner = el("div", "decision-banner");
  if (c.decision_source === "clinician_override") {
    banner.classList.add("banner-override");
    banner.textContent = `clinician override: ${c.final_decision}`;
  } else if (retained) {
    banner.classList.add("banner-retain");
    banner.textContent = `retained: ${c.final_decision}`;
  } else {
    banner.classList.add("banner-overturn");
    banner.textContent = `overturned to ${c.final_decision}`;
  }
  if (truthLabel && c.final_decision !== truthLabel) {
    banner.classList.add("banner-error");
  }
  return banner;
}

/** Build the full four-panel screen inside `root`. */
export function renderCase(root: HTMLElement, doc: CaseDoc,
                           options: RenderOptions = {}): void {
  root.replaceChildren();
  if (!doc.bundle) {
    const empty = el("div", "empty-state",
                     "No diagnosis bundle for this case yet.");
    const retry = el("button", "retry-btn", "Retry");
    empty.appendChild(retry);
    root.appendChild(empty);
    return;
  }
  const view = el("div", "case-view");
  view.appendChild(rriPanel(doc.bundle));
  view.appendChild(predictionPanel(doc, doc.bundle));
  view.appendChild(explanationPanel(doc.bundle));
  view.appendChild(wireChat(doc, options));
  root.appendChild(view);
}
