// Thin typed client over the REST endpoints. A fetch implementation is
// injectable so tests can stand in a scripted server.

import type {
  CaseDoc, ChatReply, ContestCase, DiagnosisBundle, FinalizeReply, SessionInfo,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "",
              private fetchImpl: FetchLike = (input, init) => fetch(input, init)) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch { /* non-JSON error body */ }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  health() {
    return this.request<{ status: string; poll_interval_s: number }>("GET", "/healthz");
  }

  listSessions() {
    return this.request<{ sessions: SessionInfo[] }>("GET", "/sessions");
  }

  getSession(sessionId: string) {
    return this.request<SessionInfo & { rri: number[] }>("GET", `/sessions/${sessionId}`);
  }

  openSession(profile: { name: string; age: number; sex: string },
              deviceKind: string, label?: string) {
    return this.request<{ session_id: string }>("POST", "/sessions",
                                                { profile, device_kind: deviceKind, label });
  }

  async streamRecords(sessionId: string, ndjsonLines: string[]) {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/records`,
      { method: "POST", body: ndjsonLines.join("\n") });
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return JSON.parse(await response.text()) as { accepted: number };
  }

  closeSession(sessionId: string) {
    return this.request<{ duration_min: number }>("POST", `/sessions/${sessionId}/close`);
  }

  diagnose(sessionId: string, fresh = false): Promise<DiagnosisBundle> {
    return this.request<DiagnosisBundle>(
      "POST", `/diagnose/${sessionId}?fresh=${fresh}`);
  }

  getCase(caseId: string): Promise<CaseDoc> {
    return this.request<CaseDoc>("GET", `/cases/${caseId}`);
  }

  sendMessage(caseId: string, text: string): Promise<ChatReply> {
    return this.request<ChatReply>("POST", `/cases/${caseId}/messages`, { text });
  }

  finalize(caseId: string): Promise<FinalizeReply> {
    return this.request<FinalizeReply>("POST", `/cases/${caseId}/finalize`);
  }

  override(caseId: string, decision: string, reason: string,
           clinicianId: string): Promise<{ case: ContestCase }> {
    return this.request<{ case: ContestCase }>(
      "POST", `/cases/${caseId}/override`,
      { decision, reason, clinician_id: clinicianId });
  }
}
