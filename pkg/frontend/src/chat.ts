// Contestation chat panel: transcript, send box, finalize, override dialog.
// The user message is appended optimistically; on transport failure it is
// rolled back and an inline retry affordance appears.

import { decisionBanner, overrideAllowed, RenderOptions } from "./caseView";
import type { CaseDoc, ChatMessage } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function metricsFooter(message: ChatMessage): string {
  const parts: string[] = [];
  if (message.latency_ms !== null) {
    parts.push(`rtt ${(message.latency_ms / 1000).toFixed(2)}s`);
    if (message.token_count !== null && message.latency_ms > 0) {
      parts.push(`tps ${(message.token_count / (message.latency_ms / 1000)).toFixed(1)}`);
    }
  }
  if (message.token_count !== null) parts.push(`toks ${message.token_count}`);
  if (message.latency_ms !== null) {
    parts.push(`output time ${(message.latency_ms / 1000).toFixed(2)}s`);
  }
  return parts.join(" · ");
}

function messageItem(message: ChatMessage): HTMLElement {
  const item = el("li", `msg msg-${message.role}`);
  item.appendChild(el("div", "msg-content", message.content));
  if (message.role === "assistant") {
    const footer = metricsFooter(message);
    if (footer) item.appendChild(el("div", "msg-metrics", footer));
  }
  return item;
}

function renderTranscript(list: HTMLOListElement, transcript: ChatMessage[]): void {
  list.replaceChildren(...transcript
    .filter((m) => m.role !== "system")
    .map(messageItem));
}

export function wireChat(doc: CaseDoc, options: RenderOptions): HTMLElement {
  const client = options.client;
  const now = options.now ?? Date.now();
  const panel = el("section", "panel");
  panel.dataset.panel = "chat";
  panel.appendChild(el("h2", undefined, "Contestation"));

  const bannerHost = el("div", "banner-host");
  panel.appendChild(bannerHost);
  const banner = decisionBanner(doc, options.truthLabel);
  if (banner) bannerHost.appendChild(banner);

  const list = el("ol", "transcript");
  renderTranscript(list, doc.case.transcript);
  panel.appendChild(list);

  const errorBox = el("div", "chat-error");
  errorBox.hidden = true;
  panel.appendChild(errorBox);

  const finalized = doc.case.status === "finalized";

  if (!finalized) {
    const form = el("form", "send-form");
    const input = el("textarea", "chat-input") as HTMLTextAreaElement;
    input.placeholder = "Challenge or question the assessment...";
    const send = el("button", "send-btn", "Send");
    send.type = "submit";
    form.append(input, send);
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const text = input.value.trim();
      if (!text || !client) return;
      errorBox.hidden = true;
      const optimistic: ChatMessage = { role: "user", content: text,
                                        timestamp: now / 1000,
                                        latency_ms: null, token_count: null };
      doc.case.transcript.push(optimistic);
      renderTranscript(list, doc.case.transcript);
      input.value = "";
      try {
        const reply = await client.sendMessage(doc.case.case_id, text);
        doc.case.transcript = reply.transcript;
        renderTranscript(list, doc.case.transcript);
      } catch (err) {
        doc.case.transcript.pop(); // server never saw it
        renderTranscript(list, doc.case.transcript);
        input.value = text;
        errorBox.hidden = false;
        errorBox.replaceChildren(
          el("span", undefined, `send failed: ${(err as Error).message} `),
          retryButton(() => form.requestSubmit()));
      }
    });
    panel.appendChild(form);

    const finalize = el("button", "finalize-btn", "Request finalization");
    finalize.addEventListener("click", async () => {
      if (!client) return;
      errorBox.hidden = true;
      try {
        const result = await client.finalize(doc.case.case_id);
        doc.case = result.case;
        renderTranscript(list, doc.case.transcript);
        const fresh = decisionBanner(doc, options.truthLabel);
        bannerHost.replaceChildren(...(fresh ? [fresh] : []));
        if (doc.case.status === "finalized") {
          form.remove();
          finalize.remove();
        }
      } catch (err) {
        errorBox.hidden = false;
        errorBox.textContent = `finalization failed: ${(err as Error).message}`;
      }
    });
    panel.appendChild(finalize);
  }

  if (overrideAllowed(doc, now)) {
    panel.appendChild(overrideDialog(doc, options, bannerHost, list));
  }
  return panel;
}

function retryButton(onClick: () => void): HTMLButtonElement {
  const retry = el("button", "retry-btn", "retry");
  retry.type = "button";
  retry.addEventListener("click", onClick);
  return retry;
}

function overrideDialog(doc: CaseDoc, options: RenderOptions,
                        bannerHost: HTMLElement,
                        list: HTMLOListElement): HTMLElement {
  const wrap = el("div", "override-wrap");
  const openBtn = el("button", "override-btn", "Clinician override");
  const form = el("form", "override-form");
  form.hidden = true;
  const select = el("select", "override-decision") as HTMLSelectElement;
  for (const value of ["control", "treatment"]) {
    const option = el("option", undefined, value) as HTMLOptionElement;
    option.value = value;
    select.appendChild(option);
  }
  const reason = el("textarea", "override-reason") as HTMLTextAreaElement;
  reason.placeholder = "Reason (required)";
  const clinician = el("input", "override-clinician") as HTMLInputElement;
  clinician.placeholder = "Clinician id";
  clinician.value = "";
  const submit = el("button", "override-submit", "Apply override");
  submit.type = "submit";
  submit.disabled = true;
  reason.addEventListener("input", () => {
    submit.disabled = reason.value.trim().length === 0;
  });
  form.append(select, reason, clinician, submit);
  openBtn.addEventListener("click", () => {
    form.hidden = !form.hidden;
  });
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    if (!options.client || reason.value.trim().length === 0) return;
    const result = await options.client.override(
      doc.case.case_id, select.value, reason.value.trim(),
      clinician.value.trim() || "unknown");
    doc.case = result.case;
    renderTranscript(list, doc.case.transcript);
    const fresh = decisionBanner(doc, options.truthLabel);
    bannerHost.replaceChildren(...(fresh ? [fresh] : []));
    form.hidden = true;
    openBtn.disabled = true;
  });
  wrap.append(openBtn, form);
  return wrap;
}
