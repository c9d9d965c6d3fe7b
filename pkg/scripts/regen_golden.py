#!/usr/bin/env python3
"""Regenerate the golden JSON fixtures under tests/golden/.

Run from the repository root after an intentional schema or numeric
change, then review the diff before committing.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from heart2mind.mstft import Hyperparams, MstftModel  # noqa: E402
from heart2mind.sae import explain  # noqa: E402
from heart2mind.trainer import TrainConfig, run_cv  # noqa: E402
from heart2mind.windowing import synth_dataset, znorm  # noqa: E402

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden"
TINY = dict(embed_dim=8, proj_dim=16, key_dim=8, heads=2, window_len=32,
            ffn_expansion=2)


def golden_eval_report() -> dict:
    data = synth_dataset(2, seed=7)
    config = TrainConfig(epochs=1, batch_size=8, learning_rate=1e-3, seed=0,
                         early_stop_patience=None, max_windows_per_participant=4,
                         eval_max_windows=2, window_stride=400)
    report = run_cv(data, "loocv", config, hyper=Hyperparams(**TINY))
    return report.to_json_dict()


def golden_sae_result() -> dict:
    model = MstftModel(Hyperparams(**TINY), seed=47)
    series = synth_dataset(1, seed=7)[0].rri
    window = znorm(series)[:32]
    return explain(model, window).to_json_dict()


def main() -> None:
    GOLDEN.mkdir(exist_ok=True)
    for name, doc in (("eval_report.json", golden_eval_report()),
                      ("sae_result.json", golden_sae_result())):
        path = GOLDEN / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
