"""Command-line front door.

Every subcommand writes machine-readable JSON to stdout (or --out) and a
one-line human summary to stderr. Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import api, contest, hrv, sae, signal_store
from .errors import Heart2MindError
from .mstft import Hyperparams, MstftModel, load_checkpoint, save_checkpoint
from .trainer import (TrainConfig, build_window_set, predict_participant,
                      run_cv, train)
from .windowing import load_hrv_acc, make_windows, synth_dataset, znorm


def _emit(doc: dict, out_path: str | None, summary: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
        print(f"{summary} -> {out_path}", file=sys.stderr)
    else:
        print(text)
        print(summary, file=sys.stderr)


def _load_dataset(spec: str, seed: int, n_per_class: int):
    if spec == "synth":
        return synth_dataset(n_per_class, seed)
    result = load_hrv_acc(spec)
    if result.report["excluded"]:
        print(f"loader excluded {len(result.report['excluded'])} file(s)",
              file=sys.stderr)
    return result.series


def _hyper_for(preset: str) -> Hyperparams:
    """desk = CPU-budget sizes; full = the tuned full-scale set."""
    return Hyperparams.desk() if preset == "desk" else Hyperparams()


def _train_config(args, preset: str) -> TrainConfig:
    hyper = _hyper_for(preset)
    desk = preset == "desk"
    return TrainConfig(
        epochs=args.epochs if args.epochs else (5 if desk else 50),
        batch_size=args.batch_size,
        learning_rate=hyper.learning_rate,
        weight_decay=hyper.weight_decay,
        seed=args.seed,
        early_stop_patience=None if desk else 10,
        max_windows_per_participant=args.max_windows or (24 if desk else None),
        eval_max_windows=48 if desk else None,
        window_stride=1)


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = synth_dataset(args.n_per_class, args.seed)
    for series in data:
        path = out_dir / f"{series.participant_id}.txt"
        path.write_text("\n".join(f"{v:.3f}" for v in series.rri) + "\n")
    doc = {"n_series": len(data), "directory": str(out_dir), "seed": args.seed,
           "participants": [s.participant_id for s in data]}
    _emit(doc, args.json_out, f"wrote {len(data)} synthetic participants")
    return 0


def cmd_train(args) -> int:
    data = _load_dataset(args.data, args.seed, args.n_per_class)
    hyper = _hyper_for(args.preset)
    config = _train_config(args, args.preset)
    model = MstftModel(hyper, seed=args.seed,
                       dtype=np.float32 if args.preset == "desk" else np.float64)
    window_set = build_window_set(data, hyper.window_len,
                                  max_per_participant=config.max_windows_per_participant)
    result = train(model, window_set, config)
    save_checkpoint(model, args.out)
    doc = {"checkpoint": args.out, "epochs_run": result.epochs_run,
           "loss_history": result.loss_history, "val_history": result.val_history,
           "n_windows": len(window_set), "parameters": model.parameter_count()}
    _emit(doc, args.json_out,
          f"trained {result.epochs_run} epochs; final loss "
          f"{result.loss_history[-1]:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    data = _load_dataset(args.data, args.seed, args.n_per_class)
    config = _train_config(args, args.preset)
    report = run_cv(data, args.protocol, config, hyper=_hyper_for(args.preset),
                    dtype=np.float32 if args.preset == "desk" else np.float64,
                    progress=lambda i, n, m: print(
                        f"fold {i + 1}/{n}: accuracy {m['accuracy']:.3f}",
                        file=sys.stderr))
    _emit(report.to_json_dict(), args.json_out,
          f"{args.protocol} aggregate accuracy "
          f"{report.aggregate['accuracy']:.3f}")
    return 0


def _window_stack_from_rri(rri: np.ndarray, model, stride: int):
    wins = make_windows(znorm(np.asarray(rri)), model.hyper.window_len,
                        stride=stride)
    return wins, np.stack([w.values for w in wins])


def _rri_source(args, store=None):
    if getattr(args, "rri_file", None):
        values = [float(line) for line in Path(args.rri_file).read_text().split()
                  if line.strip()]
        return np.asarray(values)
    if getattr(args, "session", None):
        store = store or signal_store.SessionStore(args.data_dir)
        return np.asarray(store.clean_rri(args.session))
    raise Heart2MindError("provide --rri-file or --session")


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    rri = _rri_source(args)
    wins, stack = _window_stack_from_rri(rri, model, args.stride)
    prob, label = predict_participant(model, stack)
    doc = {"prediction": label, "probability": prob, "n_windows": len(wins),
           "n_beats": int(rri.size)}
    _emit(doc, args.json_out, f"prediction {label} (p={prob:.3f})")
    return 0


def cmd_explain(args) -> int:
    model = load_checkpoint(args.model)
    rri = _rri_source(args)
    wins, stack = _window_stack_from_rri(rri, model, args.stride)
    if args.window is not None:
        idx = args.window
    else:
        from .trainer import predict_windows
        probs = predict_windows(model, stack)
        idx = int(np.abs(probs - 0.5).argmax())
    result = sae.explain(model, wins[idx].values, rho=args.rho, delta=args.delta,
                         flag_threshold=args.flag_threshold)
    doc = result.to_json_dict()
    doc["window_index"] = idx
    doc["window_start"] = wins[idx].start_index
    _emit(doc, args.json_out,
          f"window {idx}: {len(result.regions)} discrepancy region(s), "
          f"flagged={result.flagged}")
    return 0


def cmd_hrv(args) -> int:
    rri = _rri_source(args)
    f_r = hrv.baseline_metrics(rri)
    doc = {"f_r": f_r.to_json_dict(), "f_d": []}
    if args.regions:
        spans = json.loads(Path(args.regions).read_text())
        regions = [sae.DiscrepancyRegion(r["start"] + args.region_offset,
                                         r["end"] + args.region_offset, r.get("peak", 0.0))
                   for r in spans.get("regions", spans)]
        doc["f_d"] = [f.to_json_dict() for f in hrv.region_metrics(rri, regions)]
    _emit(doc, args.json_out,
          f"baseline rmssd {f_r.rmssd:.1f} ms over {f_r.n_beats} beats; "
          f"{len(doc['f_d'])} region(s)")
    return 0


def cmd_contest(args) -> int:
    bundle = json.loads(Path(args.bundle).read_text())
    f_r = hrv.HrvFeatures.from_json_dict(bundle["f_r"])
    f_d = [hrv.HrvFeatures.from_json_dict(f) for f in bundle.get("f_d", [])]
    case = contest.new_case(bundle.get("session_id", "cli"),
                            bundle["prediction"], bundle["probability"],
                            f_r, f_d, bundle.get("flagged", False))
    config = contest.LlmEndpointConfig(base_url=args.llm_url,
                                       model_name=args.llm_model)
    transport = None
    if args.mock_script:
        replies = json.loads(Path(args.mock_script).read_text())
        transport = contest.ScriptedLlm(replies).transport()
    audit = contest.AuditLog(args.audit_log) if args.audit_log else None
    decision = contest.request_finalization(case, config, transport=transport,
                                            audit=audit)
    _emit(case.to_json_dict(), args.json_out,
          f"decision {decision} ({case.decision_source or case.status})")
    return 0


def cmd_serve(args) -> int:
    config = api.load_config(args.config)
    api.serve(config)
    return 0


def cmd_mock_llm(args) -> int:  # pragma: no cover - process entry
    import uvicorn

    replies = json.loads(Path(args.script).read_text()) if args.script else []
    uvicorn.run(contest.mock_llm_app(replies), host=args.host, port=args.port)
    return 0


def cmd_replay(args) -> int:
    speed = math.inf if args.speed == "inf" else float(args.speed)
    count = 0
    for record in signal_store.replay(Path(args.csv), speed):
        print(json.dumps({"timestamp_ms": record.timestamp_ms,
                          "rri_ms": record.rri_ms, "hr_bpm": record.hr_bpm,
                          "ecg_uv": record.ecg_uv}))
        count += 1
    print(f"replayed {count} records", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heart2mind")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False, data=False, rri=False, preset=False):
        p.add_argument("--json-out", default=None, help="write JSON here instead of stdout")
        p.add_argument("--seed", type=int, default=1)
        if model:
            p.add_argument("--model", required=True, help="checkpoint path")
        if data:
            p.add_argument("--data", default="synth",
                           help="'synth' or a dataset directory")
            p.add_argument("--n-per-class", type=int, default=6)
        if rri:
            p.add_argument("--rri-file", default=None)
            p.add_argument("--session", default=None)
            p.add_argument("--data-dir", default="./heart2mind-data")
            p.add_argument("--stride", type=int, default=10)
        if preset:
            p.add_argument("--preset", choices=("desk", "full"), default="desk")
            p.add_argument("--epochs", type=int, default=None)
            p.add_argument("--batch-size", type=int, default=32)
            p.add_argument("--max-windows", type=int, default=None)

    p = sub.add_parser("synth", help="write a synthetic RRI dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=6)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a whole dataset")
    common(p, data=True, preset=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validated evaluation")
    common(p, data=True, preset=True)
    p.add_argument("--protocol", choices=("kfold5", "loocv"), required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="participant-level prediction")
    common(p, model=True, rri=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="dual explanation maps + regions")
    common(p, model=True, rri=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--rho", type=float, default=sae.DISCREPANCY_THRESHOLD)
    p.add_argument("--delta", type=int, default=sae.GAP_TOLERANCE)
    p.add_argument("--flag-threshold", type=int, default=sae.FLAG_THRESHOLD)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("hrv", help="whole-recording and per-region HRV metrics")
    common(p, rri=True)
    p.add_argument("--regions", default=None,
                   help="JSON file with {regions:[{start,end}...]} from explain")
    p.add_argument("--region-offset", type=int, default=0,
                   help="add this to region indices (e.g. window_start)")
    p.set_defaults(func=cmd_hrv)

    p = sub.add_parser("contest", help="run LLM finalization for a bundle")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--llm-url", default="http://127.0.0.1:8089/v1")
    p.add_argument("--llm-model", default="scripted-mock")
    p.add_argument("--mock-script", default=None,
                   help="JSON list of canned replies (offline mode)")
    p.add_argument("--audit-log", default=None)
    p.set_defaults(func=cmd_contest)

    p = sub.add_parser("serve", help="run the REST service")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("mock-llm", help="serve the scripted chat endpoint")
    p.add_argument("--script", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8089)
    p.set_defaults(func=cmd_mock_llm)

    p = sub.add_parser("replay", help="stream a session CSV as ND-JSON")
    p.add_argument("--csv", required=True)
    p.add_argument("--speed", default="inf",
                   help="real-time speed factor, or 'inf' for batch")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Heart2MindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
