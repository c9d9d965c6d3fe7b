"""Contestation protocol: prompt construction, LLM dialogue, finalization.

A case bundles the baseline prediction with whole-recording HRV metrics
and per-region metrics; the dialogue runs over an OpenAI-style
chat-completions wire format. Finalization parses a bare control/
treatment answer out of the reply tail, retries once on ambiguity, then
escalates to a clinician. Every decision lands in a hash-chained
append-only audit log.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import httpx

from .errors import (ContractError, EndpointError, ParseError, StateError,
                     TransportError)
from .hrv import HrvFeatures

SCHEMA_VERSION = 1
EDIT_WINDOW_H = 24.0

SYSTEM_MESSAGE = """You are a helpful clinical decision support AI for psychiatric disorder (schizophrenia/bipolar disorder) diagnosis. Always:
1. Think step-by-step before responding.
2. Justify prior AI prediction and the interpretation of HRV metrics, referencing clinical guidelines or evidence when possible.
3. When the finalization request is queried, you must finalize the decision (only answer "control" or "treatment"), but you may overturn prior AI prediction if, after reviewing all evidence, you are confident a different answer is correct. Clearly state the reason for any change.
4. Provide accurate, current information using clinical guidelines.
5. Avoid assumptions. Only use the provided data.
6. Cross-validate findings with multiple sources.
7. Flag urgent concerns immediately.
8. Reference sources for non-standard conclusions.
9. Maintain clarity with concise responses."""

DEFAULT_FINALIZATION_QUERY = (
    "Finalization request: after reviewing all evidence above, provide your "
    "final decision now. Answer with exactly one word: control or treatment.")
STRICT_FINALIZATION_QUERY = (
    "Your previous reply did not contain a usable decision. Respond with "
    "exactly one word and nothing else: control or treatment.")


@dataclass
class LlmEndpointConfig:
    base_url: str
    model_name: str
    api_key_ref: str = "HEART2MIND_LLM_KEY"
    max_tokens: int = 2048
    temperature: float = 0.8
    top_p: float = 0.1
    timeout_s: float = 30.0
    max_retries: int = 2
    retry_base_s: float = 0.5
    finalization_query: str = DEFAULT_FINALIZATION_QUERY


@dataclass
class ChatMessage:
    role: str                    # system | user | assistant
    content: str
    timestamp: float = 0.0
    latency_ms: float | None = None
    token_count: int | None = None


@dataclass
class ContestCase:
    case_id: str
    session_ref: str
    baseline_prediction: str     # control | treatment
    baseline_probability: float
    f_r: HrvFeatures
    f_d: list[HrvFeatures]
    sae_flagged: bool
    profile: dict | None = None  # {"age": int, "sex": str} when available
    status: str = "open"         # open | finalized | needs_clarification
    final_decision: str | None = None
    decision_source: str | None = None
    transcript: list[ChatMessage] = field(default_factory=list)
    priority_review: bool = False
    finalized_at: float | None = None

    def __post_init__(self):
        self.priority_review = self.priority_review or self.sae_flagged

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "case_id": self.case_id,
            "session_ref": self.session_ref,
            "baseline_prediction": self.baseline_prediction,
            "baseline_probability": self.baseline_probability,
            "f_r": self.f_r.to_json_dict() if self.f_r else None,
            "f_d": [f.to_json_dict() for f in self.f_d],
            "sae_flagged": self.sae_flagged,
            "priority_review": self.priority_review,
            "profile": self.profile,
            "status": self.status,
            "final_decision": self.final_decision,
            "decision_source": self.decision_source,
            "finalized_at": self.finalized_at,
            "transcript": [asdict(m) for m in self.transcript],
        }


def new_case(session_ref: str, baseline_prediction: str, baseline_probability: float,
             f_r: HrvFeatures, f_d: list[HrvFeatures], sae_flagged: bool,
             profile: dict | None = None) -> ContestCase:
    return ContestCase(case_id=uuid.uuid4().hex[:12], session_ref=session_ref,
                       baseline_prediction=baseline_prediction,
                       baseline_probability=baseline_probability,
                       f_r=f_r, f_d=f_d, sae_flagged=sae_flagged, profile=profile)


def case_from_json_dict(doc: dict) -> ContestCase:
    return ContestCase(
        case_id=doc["case_id"], session_ref=doc["session_ref"],
        baseline_prediction=doc["baseline_prediction"],
        baseline_probability=doc["baseline_probability"],
        f_r=HrvFeatures.from_json_dict(doc["f_r"]) if doc.get("f_r") else None,
        f_d=[HrvFeatures.from_json_dict(f) for f in doc.get("f_d", [])],
        sae_flagged=doc["sae_flagged"], profile=doc.get("profile"),
        status=doc.get("status", "open"),
        final_decision=doc.get("final_decision"),
        decision_source=doc.get("decision_source"),
        transcript=[ChatMessage(**m) for m in doc.get("transcript", [])],
        priority_review=doc.get("priority_review", False),
        finalized_at=doc.get("finalized_at"))


# -- prompt construction -------------------------------------------------------------

_METRIC_ORDER = ("mean_rr", "rmssd", "sdnn", "pnn50", "lf_power", "hf_power",
                 "lf_hf_ratio", "n_beats")
_RATIO_FIELDS = {"lf_hf_ratio"}


def _format_metric(name: str, value) -> str:
    if value is None:
        return f"{name}=n/a"
    if name == "n_beats":
        return f"{name}={int(value)}"
    if name in _RATIO_FIELDS:
        return f"{name}={value:.3f}"
    return f"{name}={value:.1f}"


def _serialize_features(feats: HrvFeatures) -> str:
    parts = [_format_metric(n, getattr(feats, n)) for n in _METRIC_ORDER]
    return "{" + ", ".join(parts) + "}"


def build_prompt(case: ContestCase) -> list[ChatMessage]:
    """System message plus the four-item user message, byte-deterministic."""
    if case.f_r is None:
        raise ContractError("case is missing whole-recording HRV metrics")
    if case.profile and "age" in case.profile and "sex" in case.profile:
        profile_line = (f"1. Patient profile: age {int(case.profile['age'])}, "
                        f"sex {case.profile['sex']}.")
    else:
        profile_line = "1. Patient profile: not provided."
    if case.f_d:
        regions = ",".join(
            f"[region_{i + 1}_metrics: {_serialize_features(f)}]"
            for i, f in enumerate(case.f_d))
    else:
        regions = "none detected"
    user = "\n".join([
        profile_line,
        f"2. Prior AI Prediction: {case.baseline_prediction}.",
        f"3. Baseline HRV metrics: {_serialize_features(case.f_r)}.",
        f"4. Regional HRV discrepancies: {regions}.",
    ])
    return [ChatMessage("system", SYSTEM_MESSAGE), ChatMessage("user", user)]


# -- chat transport -------------------------------------------------------------------

def _estimate_tokens(text: str) -> int:
    return max(1, len(text.split()))


def chat(config: LlmEndpointConfig, transcript: list[ChatMessage],
         new_user_message: str, *, transport=None,
         sleep=time.sleep) -> tuple[ChatMessage, dict]:
    """Send the running transcript plus one user message; append both.

    Returns (assistant message, metrics) where metrics carries rtt_ms,
    tps, toks, and output_time_s. Transport errors retry with exponential
    backoff (max_retries), endpoint errors carry a body excerpt.
    """
    user_msg = ChatMessage("user", new_user_message, timestamp=time.time())
    payload = {
        "model": config.model_name,
        "messages": [{"role": m.role, "content": m.content}
                     for m in transcript + [user_msg]],
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
        "top_p": config.top_p,
    }
    headers = {}
    api_key = os.environ.get(config.api_key_ref, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    url = config.base_url.rstrip("/") + "/chat/completions"
    last_exc: Exception | None = None
    for attempt in range(config.max_retries + 1):
        started = time.perf_counter()
        try:
            with httpx.Client(transport=transport, timeout=config.timeout_s) as client:
                response = client.post(url, json=payload, headers=headers)
            break
        except (httpx.TransportError, httpx.TimeoutException) as exc:
            last_exc = exc
            if attempt < config.max_retries:
                sleep(config.retry_base_s * (2 ** attempt))
    else:
        raise TransportError(f"endpoint unreachable after "
                             f"{config.max_retries + 1} attempts: {last_exc}")
    elapsed_s = time.perf_counter() - started
    if response.status_code // 100 != 2:
        raise EndpointError(f"endpoint returned {response.status_code}: "
                            f"{response.text[:200]}")
    try:
        doc = response.json()
        content = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError) as exc:
        raise ParseError(f"malformed chat response: {exc}") from None
    toks = doc.get("usage", {}).get("completion_tokens") or _estimate_tokens(content)
    metrics = {
        "rtt_ms": elapsed_s * 1000.0,
        "toks": int(toks),
        "output_time_s": elapsed_s,
        "tps": toks / elapsed_s if elapsed_s > 0 else float(toks),
    }
    assistant = ChatMessage("assistant", content, timestamp=time.time(),
                            latency_ms=metrics["rtt_ms"], token_count=metrics["toks"])
    transcript.append(user_msg)
    transcript.append(assistant)
    return assistant, metrics


# -- finalization ---------------------------------------------------------------------

def parse_final_decision(reply_text: str) -> str:
    """Scan the last 400 characters; the label appearing last wins."""
    tail = reply_text[-400:].lower()
    last_control = tail.rfind("control")
    last_treatment = tail.rfind("treatment")
    if last_control == -1 and last_treatment == -1:
        return "undetermined"
    return "treatment" if last_treatment > last_control else "control"


def ensure_prompted(case: ContestCase) -> None:
    """Seed the transcript with the system+user prompt if not already sent."""
    if not case.transcript:
        case.transcript.extend(build_prompt(case))


def send_user_message(case: ContestCase, config: LlmEndpointConfig, text: str,
                      *, transport=None, sleep=time.sleep) -> tuple[ChatMessage, dict]:
    if case.status == "finalized":
        raise StateError("case already finalized")
    ensure_prompted(case)
    return chat(config, case.transcript, text, transport=transport, sleep=sleep)


def request_finalization(case: ContestCase, config: LlmEndpointConfig, *,
                         transport=None, sleep=time.sleep,
                         audit: "AuditLog | None" = None) -> str:
    """Ask for the final label; one strict re-ask, then clinician escalation."""
    if case.status == "finalized":
        raise StateError("case already finalized")
    ensure_prompted(case)
    reply, _ = chat(config, case.transcript, config.finalization_query,
                    transport=transport, sleep=sleep)
    decision = parse_final_decision(reply.content)
    if decision == "undetermined":
        reply, _ = chat(config, case.transcript, STRICT_FINALIZATION_QUERY,
                        transport=transport, sleep=sleep)
        decision = parse_final_decision(reply.content)
    if decision == "undetermined":
        case.status = "needs_clarification"
        if audit is not None:
            audit.append("finalization_escalated", {"case_id": case.case_id})
        return "undetermined"
    case.final_decision = decision
    case.decision_source = ("llm_retain" if decision == case.baseline_prediction
                            else "llm_overturn")
    case.status = "finalized"
    case.finalized_at = time.time()
    if audit is not None:
        audit.append("llm_finalization", {
            "case_id": case.case_id, "baseline": case.baseline_prediction,
            "final": decision, "source": case.decision_source})
    return decision


def clinician_override(case: ContestCase, decision: str, reason_text: str,
                       clinician_id: str, *, audit: "AuditLog | None" = None,
                       now: float | None = None,
                       edit_window_h: float = EDIT_WINDOW_H) -> ContestCase:
    """Replace the decision; mandatory reason; immutable afterwards."""
    if decision not in ("control", "treatment"):
        raise ContractError("override decision must be control or treatment")
    if not reason_text or not reason_text.strip():
        raise ContractError("override reason is mandatory")
    if not clinician_id:
        raise ContractError("clinician_id is mandatory")
    now = now if now is not None else time.time()
    if case.decision_source == "clinician_override":
        raise StateError("case is immutable after a clinician override")
    if case.status == "finalized":
        assert case.finalized_at is not None
        if now - case.finalized_at > edit_window_h * 3600.0:
            raise StateError("override window closed")
    case.final_decision = decision
    case.decision_source = "clinician_override"
    case.status = "finalized"
    case.finalized_at = now
    if audit is not None:
        audit.append("clinician_override", {
            "case_id": case.case_id, "decision": decision,
            "clinician_id": clinician_id, "reason": reason_text})
    return case


# -- audit log ------------------------------------------------------------------------

GENESIS_DIGEST = "0" * 64


def _entry_digest(entry: dict) -> str:
    material = {k: entry[k] for k in ("seq", "ts", "kind", "payload", "prev_digest")}
    return hashlib.sha256(json.dumps(material, sort_keys=True).encode()).hexdigest()


class AuditLog:
    """Append-only newline-delimited JSON log with a SHA-256 hash chain."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            self.path.touch()

    def _last(self) -> tuple[int, str]:
        seq, digest = 0, GENESIS_DIGEST
        with open(self.path) as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    seq, digest = doc["seq"], doc["digest"]
        return seq, digest

    def append(self, kind: str, payload: dict) -> int:
        with self._lock:
            seq, prev_digest = self._last()
            entry = {"seq": seq + 1, "ts": time.time(), "kind": kind,
                     "payload": payload, "prev_digest": prev_digest}
            entry["digest"] = _entry_digest(entry)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            return entry["seq"]

    def entries(self) -> list[dict]:
        with open(self.path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def verify(self) -> tuple[bool, int | None]:
        """Walk the chain; returns (ok, first bad sequence number)."""
        prev = GENESIS_DIGEST
        for expected_seq, entry in enumerate(self.entries(), start=1):
            if entry["seq"] != expected_seq or entry["prev_digest"] != prev \
                    or _entry_digest(entry) != entry["digest"]:
                return False, expected_seq
            prev = entry["digest"]
        return True, None


# -- outcome tallies ------------------------------------------------------------------

def tally_outcomes(cases: list[ContestCase], truths: dict[str, str]) -> dict:
    """Count retain/overturn outcomes against ground truth.

    Baseline TP/TN/FN/FP refers to the baseline prediction vs truth;
    retain/overturn refers to the finalized decision vs the baseline.
    """
    counts = {"retain_tp": 0, "retain_tn": 0, "overturn_correct": 0,
              "overturn_fn": 0, "overturn_fp": 0, "retain_wrong": 0,
              "unfinalized": 0}
    for case in cases:
        if case.status != "finalized" or case.final_decision is None:
            counts["unfinalized"] += 1
            continue
        truth = truths[case.case_id]
        baseline_correct = case.baseline_prediction == truth
        retained = case.final_decision == case.baseline_prediction
        if baseline_correct and retained:
            counts["retain_tp" if truth == "treatment" else "retain_tn"] += 1
        elif baseline_correct and not retained:
            counts["overturn_correct"] += 1
        elif not baseline_correct and retained:
            counts["retain_wrong"] += 1
        else:  # baseline wrong, overturned
            counts["overturn_fn" if case.baseline_prediction == "control"
                   else "overturn_fp"] += 1
    return counts


# -- deterministic scripted endpoint ---------------------------------------------------

class ScriptedLlm:
    """Serves canned replies in order over the chat-completions wire format."""

    def __init__(self, replies: list[str], model_name: str = "scripted-mock"):
        self.replies = list(replies)
        self.model_name = model_name
        self._lock = threading.Lock()
        self.requests: list[dict] = []

    def next_reply(self, request_doc: dict) -> str:
        with self._lock:
            self.requests.append(request_doc)
            if not self.replies:
                return "I have no further guidance."
            return self.replies.pop(0)

    def build_response(self, request_doc: dict) -> dict:
        content = self.next_reply(request_doc)
        return {
            "id": f"mock-{len(self.requests)}",
            "object": "chat.completion",
            "model": request_doc.get("model", self.model_name),
            "choices": [{"index": 0, "finish_reason": "stop",
                         "message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": sum(_estimate_tokens(m["content"])
                                           for m in request_doc.get("messages", [])),
                      "completion_tokens": _estimate_tokens(content)},
        }

    def transport(self) -> httpx.MockTransport:
        def handler(request: httpx.Request) -> httpx.Response:
            doc = json.loads(request.content.decode())
            return httpx.Response(200, json=self.build_response(doc))

        return httpx.MockTransport(handler)


def mock_llm_app(script: list[str] | None = None):
    """FastAPI app exposing the scripted endpoint (serves the UI offline)."""
    from fastapi import FastAPI
    from starlette.requests import Request as StarletteRequest

    app = FastAPI(title="scripted chat endpoint")
    llm = ScriptedLlm(script if script is not None else [])
    app.state.llm = llm

    async def completions(request: StarletteRequest):
        doc = await request.json()
        return llm.build_response(doc)

    completions.__annotations__ = {"request": StarletteRequest}
    # cover both flavors of chat-completions base URLs
    app.post("/chat/completions")(completions)
    app.post("/v1/chat/completions")(completions)
    return app
