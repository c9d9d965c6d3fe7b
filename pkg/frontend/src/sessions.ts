// Minimal session list plus a CSV replay trigger: parse an exported
// session CSV client-side, stream it into a fresh session, close it.

import { ApiClient } from "./api";
import type { SessionInfo } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function csvToNdjson(csvText: string): string[] {
  const lines = csvText.trim().split("\n");
  if (lines[0] !== "timestamp_ms,rri_ms,hr_bpm,ecg_uv") {
    throw new Error("not a session CSV (bad header)");
  }
  return lines.slice(1).filter((line) => line !== "").map((line, i) => {
    const [ts, rri, hr, ecg] = line.split(",");
    if (ts === undefined || Number.isNaN(Number(ts))) {
      throw new Error(`bad CSV row at line ${i + 2}`);
    }
    return JSON.stringify({
      timestamp_ms: Number(ts),
      rri_ms: rri === "" ? null : Number(rri),
      hr_bpm: hr === "" ? null : Number(hr),
      ecg_uv: ecg === "" ? null : Number(ecg),
    });
  });
}

export async function replayCsvIntoSession(client: ApiClient, csvText: string,
                                           label?: string): Promise<string> {
  const ndjson = csvToNdjson(csvText);
  const opened = await client.openSession(
    { name: "replayed", age: 0, sex: "undisclosed" }, "synthetic", label);
  await client.streamRecords(opened.session_id, ndjson);
  await client.closeSession(opened.session_id);
  return opened.session_id;
}

export function renderSessionList(root: HTMLElement, sessions: SessionInfo[],
                                  onDiagnose: (sessionId: string) => void): void {
  root.replaceChildren();
  const panel = el("section", "panel session-list");
  panel.appendChild(el("h2", undefined, "Sessions"));
  const table = el("table", "session-table");
  const head = table.insertRow();
  for (const title of ["session", "device", "state", "label", "records", ""]) {
    head.appendChild(el("th", undefined, title));
  }
  for (const session of sessions) {
    const row = table.insertRow();
    row.insertCell().textContent = session.session_id;
    row.insertCell().textContent = session.device_kind;
    row.insertCell().textContent = session.state;
    row.insertCell().textContent = session.label ?? "-";
    row.insertCell().textContent = String(session.n_records);
    const actions = row.insertCell();
    if (session.state === "CLOSED") {
      const diagnose = el("button", "diagnose-btn", "Diagnose");
      diagnose.addEventListener("click", () => onDiagnose(session.session_id));
      actions.appendChild(diagnose);
    }
  }
  panel.appendChild(table);
  root.appendChild(panel);
}
