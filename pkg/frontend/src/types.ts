// Wire types mirroring the REST schemas. The UI renders server data only;
// nothing diagnostic is computed client-side.

export type Decision = "control" | "treatment";

export interface HrvFeatures {
  mean_rr: number;
  rmssd: number | null;
  sdnn: number;
  pnn50: number | null;
  lf_power: number | null;
  hf_power: number | null;
  lf_hf_ratio: number | null;
  n_beats: number;
  segment: [number, number] | "full";
  flags: string[];
  units: Record<string, string>;
}

export interface SaeRegion {
  start: number;
  end: number;
  peak: number;
  hrv?: HrvFeatures;
}

export interface SaeResult {
  schema_version: number;
  e_attn: number[];
  e_grad: number[];
  d_map: number[];
  regions: SaeRegion[];
  flagged: boolean;
}

export interface DiagnosisBundle {
  schema_version: number;
  session_id: string;
  prediction: Decision;
  probability: number;
  window_start: number;
  window_rri: number[];
  sae: SaeResult;
  f_r: HrvFeatures;
  f_d: HrvFeatures[];
  case_id: string;
  flagged: boolean;
}

export interface ChatMessage {
  role: "system" | "user" | "assistant";
  content: string;
  timestamp: number;
  latency_ms: number | null;
  token_count: number | null;
}

export interface ContestCase {
  schema_version: number;
  case_id: string;
  session_ref: string;
  baseline_prediction: Decision;
  baseline_probability: number;
  f_r: HrvFeatures | null;
  f_d: HrvFeatures[];
  sae_flagged: boolean;
  priority_review: boolean;
  profile: { age: number; sex: string } | null;
  status: "open" | "finalized" | "needs_clarification";
  final_decision: Decision | null;
  decision_source: "llm_retain" | "llm_overturn" | "clinician_override" | null;
  finalized_at: number | null;
  transcript: ChatMessage[];
}

export interface CaseDoc {
  schema_version: number;
  case: ContestCase;
  bundle: DiagnosisBundle | null;
}

export interface SessionInfo {
  session_id: string;
  device_kind: string;
  state: "RECORDING" | "CLOSED";
  label: Decision | null;
  n_records: number;
  duration_min?: number;
}

export interface ChatReply {
  schema_version: number;
  reply: string;
  metrics: { rtt_ms: number; tps: number; toks: number; output_time_s: number };
  transcript: ChatMessage[];
}

export interface FinalizeReply {
  schema_version: number;
  decision: Decision | "undetermined";
  status: string;
  decision_source: string | null;
  case: ContestCase;
}
