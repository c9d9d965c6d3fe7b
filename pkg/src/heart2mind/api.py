"""REST service tying the pipeline together for the clinician UI.

Stateless request handling over shared immutable model state; per-case
operations are serialized with a lock per case. All responses carry a
schema_version field. No `from __future__ import annotations` here:
FastAPI needs live annotation objects.
"""

import hashlib
import json
import os
import threading
from pathlib import Path
from typing import Optional

import numpy as np
import pydantic
from fastapi import Depends, FastAPI, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from starlette.requests import Request

from . import contest, hrv, sae
from .errors import (AuthenticationError, ConfigError, ContractError,
                     EndpointError, Heart2MindError, InsufficientDataError,
                     NotFoundError, ParseError, StateError, TransportError)
from .mstft import load_checkpoint
from .signal_store import CardiacRecord, Profile, SessionStore
from .trainer import predict_windows
from .windowing import make_windows, znorm

SCHEMA_VERSION = 1


class SaeParams(pydantic.BaseModel):
    rho: float = sae.DISCREPANCY_THRESHOLD
    delta: int = sae.GAP_TOLERANCE
    flag_threshold: int = sae.FLAG_THRESHOLD


class LlmSettings(pydantic.BaseModel):
    base_url: str = "http://127.0.0.1:8089/v1"
    model_name: str = "scripted-mock"
    api_key_ref: str = "HEART2MIND_LLM_KEY"
    max_tokens: int = 2048
    temperature: float = 0.8
    top_p: float = 0.1
    timeout_s: float = 30.0

    def endpoint_config(self) -> contest.LlmEndpointConfig:
        return contest.LlmEndpointConfig(
            base_url=self.base_url, model_name=self.model_name,
            api_key_ref=self.api_key_ref, max_tokens=self.max_tokens,
            temperature=self.temperature, top_p=self.top_p,
            timeout_s=self.timeout_s)


class ServiceConfig(pydantic.BaseModel):
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "./heart2mind-data"
    checkpoint_path: str = "./model.ckpt"
    llm: LlmSettings = LlmSettings()
    sae: SaeParams = SaeParams()
    cors_allowlist: list = []
    predict_stride: int = 10
    eval_max_windows: Optional[int] = 200
    bearer_token: Optional[str] = None
    poll_interval_s: float = 2.0
    ui_dir: Optional[str] = None    # built frontend root; mounted at /ui

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.model_dump(), sort_keys=True).encode()).hexdigest()


_ENV_OVERRIDES = {
    "HEART2MIND_DATA_DIR": ("data_dir",),
    "HEART2MIND_CHECKPOINT": ("checkpoint_path",),
    "HEART2MIND_LLM_URL": ("llm", "base_url"),
    "HEART2MIND_LLM_MODEL": ("llm", "model_name"),
    "HEART2MIND_PORT": ("port",),
}


def load_config(path=None, env: Optional[dict] = None) -> ServiceConfig:
    """Config file (json or yaml) merged with environment overrides."""
    env = env if env is not None else os.environ
    doc = {}
    if path is not None:
        text = Path(path).read_text()
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            doc = yaml.safe_load(text) or {}
        else:
            doc = json.loads(text)
    for var, keys in _ENV_OVERRIDES.items():
        if var in env:
            target = doc
            for key in keys[:-1]:
                target = target.setdefault(key, {})
            target[keys[-1]] = env[var]
    try:
        return ServiceConfig(**doc)
    except pydantic.ValidationError as exc:
        fields = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}"
                           for e in exc.errors())
        raise ConfigError(f"invalid service configuration: {fields}") from None


_STATUS_BY_ERROR = [
    (AuthenticationError, 401),
    (NotFoundError, 404),
    (StateError, 409),
    (InsufficientDataError, 422),
    (ParseError, 400),
    (ContractError, 400),
    (TransportError, 502),
    (EndpointError, 502),
    (ConfigError, 500),
]


def _status_for(exc: Heart2MindError) -> int:
    for etype, status in _STATUS_BY_ERROR:
        if isinstance(exc, etype):
            return status
    return 500


class PipelineState:
    """Shared service state: store, model, cases, audit, diagnosis cache."""

    def __init__(self, config: ServiceConfig, key: Optional[bytes] = None):
        self.config = config
        data_dir = Path(config.data_dir)
        self.store = SessionStore(data_dir, key=key)
        self.model = load_checkpoint(config.checkpoint_path)
        self.audit = contest.AuditLog(data_dir / "audit.ndjson")
        self.cases_dir = data_dir / "cases"
        self.bundles_dir = data_dir / "bundles"
        self.cases_dir.mkdir(exist_ok=True)
        self.bundles_dir.mkdir(exist_ok=True)
        self.cases: dict = {}
        self._case_locks: dict = {}
        self._global_lock = threading.Lock()
        self.llm_transport = None   # tests inject a scripted transport here
        for path in sorted(self.cases_dir.glob("*.json")):
            case = contest.case_from_json_dict(json.loads(path.read_text()))
            self.cases[case.case_id] = case

    def case_lock(self, case_id: str) -> threading.Lock:
        with self._global_lock:
            return self._case_locks.setdefault(case_id, threading.Lock())

    def persist_case(self, case: contest.ContestCase) -> None:
        path = self.cases_dir / f"{case.case_id}.json"
        path.write_text(json.dumps(case.to_json_dict(), indent=2, sort_keys=True))

    def get_case(self, case_id: str) -> contest.ContestCase:
        if case_id not in self.cases:
            raise NotFoundError(f"unknown case '{case_id}'")
        return self.cases[case_id]

    def bundle_path(self, session_id: str) -> Path:
        return self.bundles_dir / f"{session_id}.json"

    # -- diagnosis pipeline ---------------------------------------------------
    def pipeline_run(self, session_id: str, fresh: bool = False,
                     window_override: Optional[int] = None) -> dict:
        cached = self.bundle_path(session_id)
        if cached.exists() and not fresh and window_override is None:
            return json.loads(cached.read_text())
        info = self.store.session_info(session_id)
        if info["state"] != "CLOSED":
            raise StateError("diagnosis requires a closed session")
        rri = np.asarray(self.store.clean_rri(session_id))
        window_len = self.model.hyper.window_len
        if rri.size < window_len:
            raise InsufficientDataError(
                f"session has {rri.size} usable beats; needs at least {window_len}")
        windows = make_windows(znorm(rri), window_len,
                               stride=max(1, self.config.predict_stride))
        if self.config.eval_max_windows and len(windows) > self.config.eval_max_windows:
            idx = np.unique(np.linspace(0, len(windows) - 1,
                                        self.config.eval_max_windows).round().astype(int))
            windows = [windows[i] for i in idx]
        stack = np.stack([w.values for w in windows])
        probs = predict_windows(self.model, stack)
        probability = float(probs.mean())
        prediction = "treatment" if probability >= 0.5 else "control"
        if window_override is not None:
            if not 0 <= window_override < len(windows):
                raise ContractError(f"window index {window_override} out of range "
                                    f"(0..{len(windows) - 1})")
            chosen = window_override
        else:
            chosen = int(np.abs(probs - 0.5).argmax())
        window = windows[chosen]
        result = sae.explain(self.model, window.values,
                             rho=self.config.sae.rho, delta=self.config.sae.delta,
                             flag_threshold=self.config.sae.flag_threshold)
        absolute_regions = [
            sae.DiscrepancyRegion(window.start_index + r.start,
                                  window.start_index + r.end, r.peak_discrepancy)
            for r in result.regions]
        f_d = hrv.region_metrics(rri, absolute_regions)
        for region, feats in zip(result.regions, f_d):
            region.hrv = feats
        f_r = hrv.baseline_metrics(rri)
        profile = self.store.profile_for(session_id)
        case = contest.new_case(session_id, prediction, probability, f_r, f_d,
                                result.flagged,
                                profile={"age": profile.age, "sex": profile.sex})
        self.cases[case.case_id] = case
        self.persist_case(case)
        self.audit.append("diagnosis", {
            "session_id": session_id, "case_id": case.case_id,
            "prediction": prediction, "probability": probability,
            "sae_flagged": result.flagged, "n_regions": len(result.regions)})
        bundle = {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "prediction": prediction,
            "probability": probability,
            "window_start": window.start_index,
            "window_rri": [float(v) for v in
                           rri[window.start_index:window.start_index + window_len]],
            "sae": result.to_json_dict(),
            "f_r": f_r.to_json_dict(),
            "f_d": [f.to_json_dict() for f in f_d],
            "case_id": case.case_id,
            "flagged": result.flagged,
        }
        cached.write_text(json.dumps(bundle, indent=2, sort_keys=True))
        return bundle


def create_app(config: ServiceConfig, key: Optional[bytes] = None) -> FastAPI:
    state = PipelineState(config, key=key)
    app = FastAPI(title="heart2mind", version="0.1.0")
    app.state.pipeline = state
    if config.cors_allowlist:
        app.add_middleware(CORSMiddleware, allow_origins=list(config.cors_allowlist),
                           allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(Heart2MindError)
    async def domain_error_handler(request: Request, exc: Heart2MindError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"schema_version": SCHEMA_VERSION,
                                     "error": type(exc).__name__,
                                     "detail": str(exc)})

    async def check_auth(request: Request):
        if config.bearer_token and request.url.path != "/healthz":
            header = request.headers.get("authorization", "")
            if header != f"Bearer {config.bearer_token}":
                raise AuthenticationError("missing or invalid bearer token")

    dependencies = [Depends(check_auth)]

    @app.get("/healthz")
    async def healthz():
        return {"schema_version": SCHEMA_VERSION, "status": "ok",
                "model_checksum": state.model.checksum(),
                "config_digest": state.config.digest(),
                "poll_interval_s": config.poll_interval_s}

    @app.post("/sessions", dependencies=dependencies)
    async def open_session(request: Request):
        doc = await request.json()
        profile = Profile(**doc["profile"])
        session_id = state.store.open_session(profile, doc["device_kind"],
                                              label=doc.get("label"))
        return {"schema_version": SCHEMA_VERSION, "session_id": session_id,
                "state": "RECORDING"}

    @app.get("/sessions", dependencies=dependencies)
    async def list_sessions():
        return {"schema_version": SCHEMA_VERSION,
                "sessions": state.store.list_sessions()}

    @app.post("/sessions/{session_id}/records", dependencies=dependencies)
    async def ingest(session_id: str, request: Request):
        body = (await request.body()).decode()
        acks, flag_counts = [], {}
        for line_no, line in enumerate(body.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad record JSON: {exc}", line=line_no) from None
            record = CardiacRecord(
                timestamp_ms=int(doc["timestamp_ms"]),
                rri_ms=doc.get("rri_ms"), hr_bpm=doc.get("hr_bpm"),
                ecg_uv=doc.get("ecg_uv"))
            ack = state.store.ingest_record(session_id, record)
            acks.append(ack.flags)
            for f in ack.flags:
                flag_counts[f] = flag_counts.get(f, 0) + 1
        return {"schema_version": SCHEMA_VERSION, "accepted": len(acks),
                "flag_counts": flag_counts}

    @app.post("/sessions/{session_id}/close", dependencies=dependencies)
    async def close_session(session_id: str):
        summary = state.store.close_session(session_id)
        return {"schema_version": SCHEMA_VERSION, **summary}

    @app.get("/sessions/{session_id}", dependencies=dependencies)
    async def get_session(session_id: str):
        info = state.store.session_info(session_id)
        rri = state.store.clean_rri(session_id)
        return {"schema_version": SCHEMA_VERSION, **info, "rri": rri}

    @app.get("/sessions/{session_id}/export.csv", dependencies=dependencies)
    async def export_csv(session_id: str):
        return Response(content=state.store.export_csv(session_id),
                        media_type="text/csv")

    @app.post("/diagnose/{session_id}", dependencies=dependencies)
    async def diagnose(session_id: str, fresh: bool = Query(False),
                       window: Optional[int] = Query(None)):
        return state.pipeline_run(session_id, fresh=fresh, window_override=window)

    @app.get("/cases/{case_id}", dependencies=dependencies)
    async def get_case(case_id: str):
        case = state.get_case(case_id)
        bundle_path = state.bundle_path(case.session_ref)
        bundle = json.loads(bundle_path.read_text()) if bundle_path.exists() else None
        return {"schema_version": SCHEMA_VERSION, "case": case.to_json_dict(),
                "bundle": bundle}

    @app.post("/cases/{case_id}/messages", dependencies=dependencies)
    async def case_message(case_id: str, request: Request):
        doc = await request.json()
        text = doc.get("text", "")
        if not text.strip():
            raise ContractError("message text required")
        case = state.get_case(case_id)
        with state.case_lock(case_id):
            reply, metrics = contest.send_user_message(
                case, config.llm.endpoint_config(), text,
                transport=state.llm_transport)
            state.persist_case(case)
        return {"schema_version": SCHEMA_VERSION, "reply": reply.content,
                "metrics": metrics,
                "transcript": [vars(m) for m in case.transcript]}

    @app.post("/cases/{case_id}/finalize", dependencies=dependencies)
    async def finalize_case(case_id: str):
        case = state.get_case(case_id)
        with state.case_lock(case_id):
            decision = contest.request_finalization(
                case, config.llm.endpoint_config(),
                transport=state.llm_transport, audit=state.audit)
            state.persist_case(case)
        return {"schema_version": SCHEMA_VERSION, "decision": decision,
                "status": case.status, "decision_source": case.decision_source,
                "case": case.to_json_dict()}

    @app.post("/cases/{case_id}/override", dependencies=dependencies)
    async def override_case(case_id: str, request: Request):
        doc = await request.json()
        case = state.get_case(case_id)
        with state.case_lock(case_id):
            contest.clinician_override(case, doc.get("decision", ""),
                                       doc.get("reason", ""),
                                       doc.get("clinician_id", ""),
                                       audit=state.audit)
            state.persist_case(case)
        return {"schema_version": SCHEMA_VERSION, "case": case.to_json_dict()}

    if config.ui_dir and Path(config.ui_dir).is_dir():
        from starlette.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True),
                  name="ui")

    return app


def serve(config: ServiceConfig) -> None:  # pragma: no cover - process entry
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
