// Golden-fixture rendering: the four panels come up without any network.

import { beforeEach, describe, expect, it } from "vitest";

import { formatMetric, overrideAllowed, renderCase } from "../src/caseView";
import type { CaseDoc } from "../src/types";

import caseOpen from "../fixtures/case_open.json";
import caseRetained from "../fixtures/case_retained.json";
import caseOverturned from "../fixtures/case_overturned.json";
import flaggedBundle from "../fixtures/bundle_flagged_five_regions.json";

function docOf(fixture: unknown): CaseDoc {
  return JSON.parse(JSON.stringify(fixture)) as CaseDoc;
}

function flaggedDoc(): CaseDoc {
  const doc = docOf(caseRetained);
  doc.bundle = JSON.parse(JSON.stringify(flaggedBundle));
  return doc;
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<div id='root'></div>";
  root = document.getElementById("root") as HTMLElement;
});

describe("renderCase panels", () => {
  it("renders all four panels from the open-case fixture", () => {
    renderCase(root, docOf(caseOpen));
    for (const name of ["rri", "prediction", "explanation", "chat"]) {
      expect(root.querySelector(`[data-panel="${name}"]`),
             `panel ${name}`).toBeTruthy();
    }
  });

  it("shows prediction, probability, and baseline HRV", () => {
    const doc = docOf(caseOpen);
    renderCase(root, doc);
    const label = root.querySelector(".prediction-label") as HTMLElement;
    expect(label.textContent).toBe(doc.bundle!.prediction);
    const prob = root.querySelector(".prediction-prob") as HTMLElement;
    expect(prob.textContent).toContain(
      (doc.bundle!.probability * 100).toFixed(1));
    expect(root.querySelector("[data-panel='prediction'] .hrv-table"))
      .toBeTruthy();
  });

  it("renders the empty state with retry when the bundle is missing", () => {
    const doc = docOf(caseOpen);
    doc.bundle = null;
    renderCase(root, doc);
    expect(root.querySelector(".empty-state")).toBeTruthy();
    expect(root.querySelector(".retry-btn")).toBeTruthy();
  });
});

describe("five-region flagged fixture", () => {
  it("draws five clickable shaded spans", () => {
    renderCase(root, flaggedDoc());
    const spans = root.querySelectorAll(".region-span");
    expect(spans).toHaveLength(5);
  });

  it("shows the priority review badge", () => {
    renderCase(root, flaggedDoc());
    const badge = root.querySelector(".badge.priority-review") as HTMLElement;
    expect(badge).toBeTruthy();
    expect(badge.textContent).toContain("priority review");
  });

  it("clicking a region reveals its HRV table", () => {
    const doc = flaggedDoc();
    renderCase(root, doc);
    const detail = root.querySelector(".region-detail") as HTMLElement;
    expect(detail.hidden).toBe(true);
    const third = root.querySelectorAll(".region-span")[2] as HTMLElement;
    third.click();
    expect(detail.hidden).toBe(false);
    expect(detail.querySelector(".hrv-table")).toBeTruthy();
    expect(detail.textContent).toContain("Region 3");
    expect(detail.textContent).toContain("mean_rr");
    expect(third.classList.contains("selected")).toBe(true);
  });

  it("overlay toggles hide and show each map independently", () => {
    renderCase(root, flaggedDoc());
    const canvas = root.querySelector(".overlay-canvas") as HTMLCanvasElement;
    const attn = root.querySelector(".toggle-attn") as HTMLInputElement;
    const grad = root.querySelector(".toggle-grad") as HTMLInputElement;
    expect(canvas.dataset.attnVisible).toBe("true");
    expect(canvas.dataset.gradVisible).toBe("true");
    attn.checked = false;
    attn.dispatchEvent(new Event("change"));
    expect(canvas.dataset.attnVisible).toBe("false");
    expect(canvas.dataset.gradVisible).toBe("true");
    grad.checked = false;
    grad.dispatchEvent(new Event("change"));
    expect(canvas.dataset.gradVisible).toBe("false");
  });
});

describe("finalized cases render read-only", () => {
  it("retained case: blue banner, no send box, no finalize button", () => {
    renderCase(root, docOf(caseRetained));
    const banner = root.querySelector(".decision-banner") as HTMLElement;
    expect(banner.classList.contains("banner-retain")).toBe(true);
    expect(banner.textContent).toContain("retained");
    expect(root.querySelector(".send-form")).toBeNull();
    expect(root.querySelector(".finalize-btn")).toBeNull();
  });

  it("overturned case: green banner naming the new decision", () => {
    renderCase(root, docOf(caseOverturned));
    const banner = root.querySelector(".decision-banner") as HTMLElement;
    expect(banner.classList.contains("banner-overturn")).toBe(true);
    expect(banner.textContent).toContain("overturned to treatment");
  });

  it("override stays available only inside the edit window", () => {
    const doc = docOf(caseRetained);
    const finalizedMs = (doc.case.finalized_at as number) * 1000;
    expect(overrideAllowed(doc, finalizedMs + 3600 * 1000)).toBe(true);
    expect(overrideAllowed(doc, finalizedMs + 25 * 3600 * 1000)).toBe(false);
    renderCase(root, doc, { now: finalizedMs + 25 * 3600 * 1000 });
    expect(root.querySelector(".override-btn")).toBeNull();
  });

  it("clinician-overridden cases can never be overridden again", () => {
    const doc = docOf(caseRetained);
    doc.case.decision_source = "clinician_override";
    expect(overrideAllowed(doc, Date.now())).toBe(false);
  });
});

describe("formatMetric", () => {
  const units = { mean_rr: "ms", lf_hf_ratio: "dimensionless" };

  it("renders milliseconds with one decimal", () => {
    expect(formatMetric("mean_rr", 812.3456, units)).toBe("812.3 ms");
  });

  it("renders ratios with three decimals", () => {
    expect(formatMetric("lf_hf_ratio", 1.06666, units)).toBe("1.067 dimensionless");
  });

  it("renders nulls as n/a", () => {
    expect(formatMetric("lf_power", null, units)).toBe("n/a");
  });
});
