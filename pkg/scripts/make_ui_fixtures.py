#!/usr/bin/env python3
"""Generate golden JSON fixtures for the frontend under frontend/fixtures/.

Everything is produced by the real pipeline code, so the fixtures pin the
wire schemas the UI consumes. The five-region flagged bundle crafts its
explanation maps (the flag threshold in that service config is 4), but
regions, metrics, and serialization all come from the production code.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from heart2mind import api, contest, hrv, sae  # noqa: E402
from heart2mind.contest import ScriptedLlm  # noqa: E402
from heart2mind.mstft import Hyperparams, MstftModel, save_checkpoint  # noqa: E402
from heart2mind.signal_store import CardiacRecord, Profile  # noqa: E402
from heart2mind.windowing import synth_dataset  # noqa: E402

TINY = dict(embed_dim=8, proj_dim=16, key_dim=8, heads=2, window_len=32,
            ffn_expansion=2)
OUT = ROOT / "frontend" / "fixtures"
KEY = bytes(range(32))


def organic_state(tmp: Path) -> api.PipelineState:
    ckpt = tmp / "model.ckpt"
    save_checkpoint(MstftModel(Hyperparams(**TINY), seed=3), ckpt)
    config = api.ServiceConfig(data_dir=str(tmp / "data"), checkpoint_path=str(ckpt),
                               predict_stride=5, eval_max_windows=20)
    return api.PipelineState(config, key=KEY)


def make_session(state: api.PipelineState, rri_values, label="treatment") -> str:
    sid = state.store.open_session(Profile("fixture", 44, "female"), "synthetic",
                                   label=label)
    ts = 0
    for value in rri_values:
        ts += int(value)
        state.store.ingest_record(sid, CardiacRecord(ts, rri_ms=float(value),
                                                     hr_bpm=60000.0 / value))
    state.store.close_session(sid)
    return sid


def crafted_flagged_bundle(state: api.PipelineState, session_id: str) -> dict:
    """Bundle with exactly five discrepancy regions, flagged (threshold 4)."""
    rri = np.asarray(state.store.clean_rri(session_id))
    window_len = 32
    window_start = 40
    e_grad = np.zeros(window_len)
    e_attn = np.zeros(window_len)
    spans = [(1, 2), (7, 8), (13, 14), (19, 20), (25, 27)]
    for s, e in spans:
        e_attn[s:e + 1] = 1.0
    d_map, regions = sae.discrepancy(e_attn, e_grad, rho=0.5, delta=2)
    assert [(r.start, r.end) for r in regions] == spans
    flagged = sae.flag(regions, flag_threshold=4)
    assert flagged
    absolute = [sae.DiscrepancyRegion(window_start + r.start, window_start + r.end,
                                      r.peak_discrepancy) for r in regions]
    f_d = hrv.region_metrics(rri, absolute)
    for region, feats in zip(regions, f_d):
        region.hrv = feats
    f_r = hrv.baseline_metrics(rri)
    result = sae.SaeResult(
        e_attn=sae.ExplanationMap(e_attn, "attention", list(sae.TARGET_ATTENTION_LAYERS)),
        e_grad=sae.ExplanationMap(e_grad, "gradient", list(sae.TARGET_ACTIVATION_LAYERS)),
        e_attn_aligned=sae.dtw_align(e_attn, e_grad), d_map=d_map,
        regions=regions, flagged=flagged, prob=0.91)
    case = contest.new_case(session_id, "treatment", 0.91, f_r, f_d, flagged,
                            profile={"age": 44, "sex": "female"})
    state.cases[case.case_id] = case
    state.persist_case(case)
    return {
        "schema_version": api.SCHEMA_VERSION,
        "session_id": session_id,
        "prediction": "treatment",
        "probability": 0.91,
        "window_start": window_start,
        "window_rri": [float(v) for v in rri[window_start:window_start + window_len]],
        "sae": result.to_json_dict(),
        "f_r": f_r.to_json_dict(),
        "f_d": [f.to_json_dict() for f in f_d],
        "case_id": case.case_id,
        "flagged": flagged,
    }


def finalized_cases(state: api.PipelineState, bundle: dict) -> tuple[dict, dict]:
    """One retained case and one overturned case, driven through the LLM path."""
    config = contest.LlmEndpointConfig(base_url="http://mock/v1",
                                       model_name="scripted-mock", retry_base_s=0.0)
    f_r = hrv.HrvFeatures.from_json_dict(bundle["f_r"])
    f_d = [hrv.HrvFeatures.from_json_dict(f) for f in bundle["f_d"]]

    retain = contest.new_case(bundle["session_id"], "treatment", 0.91, f_r, f_d,
                              True, profile={"age": 44, "sex": "female"})
    llm = ScriptedLlm([
        "The regional discrepancies show reduced vagal tone across all five "
        "segments; the baseline RMSSD is low. This supports the assessment.",
        "FINAL DECISION: treatment"])
    transport = llm.transport()
    contest.send_user_message(retain, config, "Walk me through the evidence.",
                              transport=transport)
    contest.request_finalization(retain, config, transport=transport)

    overturn = contest.new_case(bundle["session_id"], "control", 0.38, f_r, f_d,
                                True, profile={"age": 44, "sex": "female"})
    llm2 = ScriptedLlm([
        "The autonomic pattern is dysregulated despite the baseline call; "
        "after weighing the regional metrics I must overturn: treatment"])
    contest.request_finalization(overturn, config, transport=llm2.transport())
    return retain.to_json_dict(), overturn.to_json_dict()


def main() -> None:
    import tempfile

    OUT.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        state = organic_state(Path(tmp))
        series = synth_dataset(1, seed=5)
        control_rri = series[0].rri[:220]
        sid_clean = make_session(state, control_rri, label="control")
        clean_bundle = state.pipeline_run(sid_clean)
        clean_case = state.get_case(clean_bundle["case_id"]).to_json_dict()

        treatment_rri = [s for s in series if s.label == "treatment"][0].rri[:220]
        sid_flagged = make_session(state, treatment_rri, label="treatment")
        flagged_bundle = crafted_flagged_bundle(state, sid_flagged)
        retain_case, overturn_case = finalized_cases(state, flagged_bundle)

        sessions = {"schema_version": api.SCHEMA_VERSION,
                    "sessions": state.store.list_sessions()}

    fixtures = {
        "bundle_clean.json": clean_bundle,
        "bundle_flagged_five_regions.json": flagged_bundle,
        "case_open.json": {"schema_version": api.SCHEMA_VERSION,
                           "case": clean_case, "bundle": clean_bundle},
        "case_retained.json": {"schema_version": api.SCHEMA_VERSION,
                               "case": retain_case, "bundle": flagged_bundle},
        "case_overturned.json": {"schema_version": api.SCHEMA_VERSION,
                                 "case": overturn_case, "bundle": flagged_bundle},
        "sessions.json": sessions,
    }
    for name, doc in fixtures.items():
        path = OUT / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
