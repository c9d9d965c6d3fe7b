"""Loss, optimization, cross-validation, and evaluation metrics.

Training is deterministic given a seed: shuffling, augmentation noise,
stochastic skips, and dropout all draw from one seeded generator.
Participant-level decisions average the window probabilities and call
treatment at >= 0.5 (ties deliberately favor review over a missed case).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (ConfigError, ContractError, InsufficientDataError,
                     NumericsError)
from .mstft import Hyperparams, MstftModel
from .windowing import (ParticipantSeries, participant_windows,
                        split_kfold, split_loocv)

PROB_EPS = 1e-7
SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-5
    weight_decay: float = 1e-5
    seed: int = 0
    early_stop_patience: int | None = 10
    max_windows_per_participant: int | None = None
    eval_max_windows: int | None = None
    window_stride: int = 1
    val_fraction: float = 0.2

    def __post_init__(self):
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("rates must be non-negative")


@dataclass
class WindowSet:
    """Stacked normalized windows with 0/1 labels (treatment = 1)."""

    x: np.ndarray                    # [N, T]
    y: np.ndarray                    # [N]
    participant_ids: list[str]

    def __len__(self) -> int:
        return self.x.shape[0]


def _evenly_spaced(n: int, cap: int | None) -> np.ndarray:
    if cap is None or n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(int))


def build_window_set(participants: list[ParticipantSeries], window_len: int,
                     *, stride: int = 1, max_per_participant: int | None = None) -> WindowSet:
    xs, ys, pids = [], [], []
    for p in participants:
        wins = participant_windows(p, window_len, stride=stride)
        for i in _evenly_spaced(len(wins), max_per_participant):
            xs.append(wins[i].values)
            ys.append(1.0 if p.label == "treatment" else 0.0)
            pids.append(p.participant_id)
    if not xs:
        raise InsufficientDataError("no usable windows")
    return WindowSet(np.stack(xs), np.asarray(ys), pids)


def bce_loss(prob: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on clamped probabilities."""
    target = Tensor(np.asarray(y, dtype=prob.dtype).reshape(prob.shape))
    p = ad.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    losses = ad.sub(ad.mul(ad.mul(target, ad.log(p)), Tensor(np.array(-1.0))),
                    ad.mul(ad.sub(Tensor(np.array(1.0)), target),
                           ad.log(ad.sub(Tensor(np.array(1.0)), p))))
    return losses.mean()


class AdamW:
    """Adaptive moments with decoupled weight decay (beta1 0.9, beta2 0.999)."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1 ** self.t)
            v_hat = self.v[name] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                         + self.weight_decay * p.data)


@dataclass
class TrainResult:
    loss_history: list[float]
    val_history: list[float]
    epochs_run: int
    stopped_early: bool


def _epoch_pass(model: MstftModel, xs: np.ndarray, ys: np.ndarray,
                config: TrainConfig, rng: np.random.Generator,
                optimizer: AdamW) -> float:
    order = rng.permutation(len(xs))
    total, count = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        if idx.size < 2:
            continue  # batch norm needs at least two rows in train mode
        trace = model.forward(xs[idx], mode="train", rng=rng)
        loss = bce_loss(trace.prob_node, ys[idx])
        step_loss = loss.item()
        if not np.isfinite(step_loss):
            raise NumericsError("training loss went non-finite")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += step_loss * idx.size
        count += idx.size
    return total / max(count, 1)


def _validation_loss(model: MstftModel, xs: np.ndarray, ys: np.ndarray,
                     batch: int) -> float:
    total = 0.0
    for start in range(0, len(xs), batch):
        trace = model.forward(xs[start:start + batch], mode="eval")
        total += bce_loss(trace.prob_node, ys[start:start + batch]).item() * \
            len(xs[start:start + batch])
    return total / len(xs)


def train(model: MstftModel, windows: WindowSet, config: TrainConfig) -> TrainResult:
    """Optimize in place; returns per-epoch loss history.

    Runs with per-op NaN checking disabled for throughput; every batch
    loss is still verified finite, so blowups abort rather than poison
    the parameters.
    """
    with ad.numeric_guard(False):
        return _train_guarded(model, windows, config)


def _train_guarded(model: MstftModel, windows: WindowSet,
                   config: TrainConfig) -> TrainResult:
    if len(set(windows.y.tolist())) < 2:
        raise ConfigError("training set must contain both classes")
    rng = np.random.default_rng(config.seed)
    train_idx = np.arange(len(windows))
    val_idx = np.empty(0, dtype=int)
    if config.early_stop_patience is not None and config.val_fraction > 0:
        pids = sorted(set(windows.participant_ids))
        n_val = max(1, int(round(config.val_fraction * len(pids))))
        if len(pids) - n_val >= 2:
            val_pids = set(rng.choice(pids, size=n_val, replace=False).tolist())
            mask = np.array([pid in val_pids for pid in windows.participant_ids])
            # keep the split only if both classes survive on the train side
            if len(set(windows.y[~mask].tolist())) == 2:
                train_idx, val_idx = np.where(~mask)[0], np.where(mask)[0]
    optimizer = AdamW(model.params, config.learning_rate, config.weight_decay)
    history: list[float] = []
    val_history: list[float] = []
    best_val, since_best = np.inf, 0
    stopped = False
    for _ in range(config.epochs):
        history.append(_epoch_pass(model, windows.x[train_idx], windows.y[train_idx],
                                   config, rng, optimizer))
        if val_idx.size:
            val = _validation_loss(model, windows.x[val_idx], windows.y[val_idx],
                                   config.batch_size)
            val_history.append(val)
            if val < best_val - 1e-6:
                best_val, since_best = val, 0
            else:
                since_best += 1
                if since_best >= config.early_stop_patience:
                    stopped = True
                    break
    return TrainResult(history, val_history, len(history), stopped)


def predict_windows(model: MstftModel, x: np.ndarray, batch: int = 64) -> np.ndarray:
    """Window-level probabilities, eval mode, chunked for memory."""
    probs = []
    for start in range(0, len(x), batch):
        probs.append(model.forward(x[start:start + batch], mode="eval").prob)
    return np.concatenate(probs)


def predict_participant(model: MstftModel, windows: np.ndarray) -> tuple[float, str]:
    """Mean window probability; treatment at >= 0.5 (tie goes to review)."""
    if len(windows) == 0:
        raise ContractError("prediction needs at least one window")
    prob = float(predict_windows(model, np.atleast_2d(windows)).mean())
    return prob, ("treatment" if prob >= 0.5 else "control")


# -- metrics --------------------------------------------------------------------

def confusion_metrics(tp: int, tn: int, fp: int, fn: int) -> dict:
    if min(tp, tn, fp, fn) < 0:
        raise ContractError("confusion counts must be non-negative")
    total = tp + tn + fp + fn
    flags = []
    if total == 0:
        return {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0,
                "flags": ["undefined-metrics"]}
    accuracy = (tp + tn) / total
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["undefined-precision"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["undefined-recall"]
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall,
            "f1": f1, "flags": flags}


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg), ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ContractError("AUC undefined without both classes")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


# -- cross-validation harness ---------------------------------------------------

@dataclass
class EvalReport:
    protocol: str
    seed: int
    per_fold: list[dict]
    aggregate: dict
    confusion: dict
    per_participant: list[dict]
    schema_version: int = SCHEMA_VERSION

    def to_json_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _metrics_from_predictions(preds: list[dict]) -> tuple[dict, dict]:
    tp = sum(1 for p in preds if p["label"] == "treatment" and p["predicted"] == "treatment")
    tn = sum(1 for p in preds if p["label"] == "control" and p["predicted"] == "control")
    fp = sum(1 for p in preds if p["label"] == "control" and p["predicted"] == "treatment")
    fn = sum(1 for p in preds if p["label"] == "treatment" and p["predicted"] == "control")
    metrics = confusion_metrics(tp, tn, fp, fn)
    labels = [1 if p["label"] == "treatment" else 0 for p in preds]
    if len(set(labels)) == 2:
        metrics["auc"] = roc_auc([p["probability"] for p in preds], labels)
    else:
        metrics["auc"] = None
    return metrics, {"tp": tp, "tn": tn, "fp": fp, "fn": fn}


def run_cv(dataset: list[ParticipantSeries], protocol: str, config: TrainConfig,
           hyper: Hyperparams | None = None, *, dtype=np.float64,
           progress=None) -> EvalReport:
    """Train one model per fold and score held-out participants.

    kfold5 aggregates by averaging fold metrics; loocv pools the held-out
    predictions (per-fold metrics are degenerate for single-subject folds).
    """
    hyper = hyper or Hyperparams()
    if protocol == "kfold5":
        plan = split_kfold(dataset, 5, config.seed)
    elif protocol == "loocv":
        plan = split_loocv(dataset)
    else:
        raise ConfigError(f"unknown protocol '{protocol}'")
    by_id = {p.participant_id: p for p in dataset}
    per_fold, per_participant = [], []
    for fold_idx, (train_ids, test_ids) in enumerate(plan.folds):
        model = MstftModel(hyper, seed=config.seed + 1000 * fold_idx, dtype=dtype)
        window_set = build_window_set([by_id[i] for i in train_ids], hyper.window_len,
                                      stride=config.window_stride,
                                      max_per_participant=config.max_windows_per_participant)
        result = train(model, window_set, config)
        fold_preds = []
        for pid in test_ids:
            wins = build_window_set([by_id[pid]], hyper.window_len,
                                    stride=config.window_stride,
                                    max_per_participant=config.eval_max_windows)
            prob, predicted = predict_participant(model, wins.x)
            entry = {"participant_id": pid, "label": by_id[pid].label,
                     "probability": prob, "predicted": predicted, "fold": fold_idx}
            fold_preds.append(entry)
            per_participant.append(entry)
        fold_metrics, fold_conf = _metrics_from_predictions(fold_preds)
        per_fold.append({"fold": fold_idx, "test_ids": list(test_ids),
                         "metrics": fold_metrics, "confusion": fold_conf,
                         "final_train_loss": result.loss_history[-1],
                         "epochs_run": result.epochs_run})
        if progress is not None:
            progress(fold_idx, len(plan.folds), fold_metrics)
    pooled_metrics, pooled_conf = _metrics_from_predictions(per_participant)
    if protocol == "kfold5":
        keys = ("accuracy", "precision", "recall", "f1", "auc")
        aggregate = {k: float(np.mean([f["metrics"][k] for f in per_fold
                                       if f["metrics"][k] is not None])) for k in keys}
        aggregate["flags"] = sorted({fl for f in per_fold for fl in f["metrics"]["flags"]})
    else:
        aggregate = pooled_metrics
    return EvalReport(protocol=protocol, seed=config.seed, per_fold=per_fold,
                      aggregate=aggregate, confusion=pooled_conf,
                      per_participant=per_participant)
