// Entry point: hash routing between the session list and case screens,
// with transcript polling for concurrent viewers.

import { ApiClient } from "./api";
import { renderCase } from "./caseView";
import { renderSessionList, replayCsvIntoSession } from "./sessions";

const client = new ApiClient("");
let pollTimer: number | undefined;

function setPolling(callback: (() => void) | null, intervalMs: number): void {
  if (pollTimer !== undefined) window.clearInterval(pollTimer);
  pollTimer = callback ? window.setInterval(callback, intervalMs) : undefined;
}

async function showSessions(root: HTMLElement): Promise<void> {
  setPolling(null, 0);
  const { sessions } = await client.listSessions();
  renderSessionList(root, sessions, async (sessionId) => {
    const bundle = await client.diagnose(sessionId);
    window.location.hash = `#/case/${bundle.case_id}`;
  });
  const replay = document.createElement("input");
  replay.type = "file";
  replay.className = "replay-input";
  replay.addEventListener("change", async () => {
    const file = replay.files?.[0];
    if (!file) return;
    const sessionId = await replayCsvIntoSession(client, await file.text());
    window.location.hash = "#/sessions";
    await showSessions(root);
    console.log(`replayed into session ${sessionId}`);
  });
  const label = document.createElement("label");
  label.className = "replay-label";
  label.append("Replay a session CSV: ", replay);
  root.appendChild(label);
}

async function showCase(root: HTMLElement, caseId: string): Promise<void> {
  try {
    const doc = await client.getCase(caseId);
    renderCase(root, doc, { client });
    const health = await client.health();
    setPolling(async () => {
      const latest = await client.getCase(caseId);
      if (latest.case.transcript.length !== doc.case.transcript.length
          || latest.case.status !== doc.case.status) {
        renderCase(root, latest, { client });
      }
    }, Math.max(500, health.poll_interval_s * 1000));
  } catch {
    root.replaceChildren();
    const empty = document.createElement("div");
    empty.className = "empty-state";
    empty.textContent = `Case ${caseId} not found. `;
    const retry = document.createElement("button");
    retry.className = "retry-btn";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => showCase(root, caseId));
    empty.appendChild(retry);
    root.appendChild(empty);
  }
}

export async function route(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const hash = window.location.hash || "#/sessions";
  const caseMatch = hash.match(/^#\/case\/(.+)$/);
  if (caseMatch) {
    await showCase(root, caseMatch[1]);
  } else {
    await showSessions(root);
  }
}

window.addEventListener("hashchange", () => { void route(); });
window.addEventListener("DOMContentLoaded", () => { void route(); });
