"""Dataset preparation: normalization, sliding windows, CV splits, loaders.

Participant series are z-normalized as whole recordings (never per
window), then cut into length-T windows with stride 1 so consecutive
windows share T-1 samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ContractError, DegenerateSeriesError,
                     InsufficientDataError, NotFoundError)

WINDOW_LEN = 300
LABELS = ("control", "treatment")


@dataclass
class ParticipantSeries:
    participant_id: str
    rri: np.ndarray          # milliseconds
    label: str               # control | treatment

    def __post_init__(self):
        self.rri = np.asarray(self.rri, dtype=np.float64)
        if self.label not in LABELS:
            raise ContractError(f"unknown label '{self.label}'")


@dataclass
class Window:
    values: np.ndarray       # length T, participant-normalized units
    participant_id: str
    start_index: int


@dataclass
class SplitPlan:
    protocol: str            # kfold5 | loocv
    folds: list[tuple[list[str], list[str]]]   # (train ids, test ids)
    seed: int


@dataclass
class LoadResult:
    series: list[ParticipantSeries]
    report: dict = field(default_factory=dict)


def znorm(rri: np.ndarray) -> np.ndarray:
    """Rescale to zero mean and unit population variance."""
    rri = np.asarray(rri, dtype=np.float64)
    if rri.size < 2:
        raise InsufficientDataError("z-normalization needs at least 2 samples")
    std = rri.std()
    if std == 0.0:
        raise DegenerateSeriesError("constant series cannot be z-normalized")
    return (rri - rri.mean()) / std


def make_windows(series: np.ndarray, window_len: int = WINDOW_LEN, *,
                 participant_id: str = "", stride: int = 1) -> list[Window]:
    """All length-T subsequences; stride 1 yields N-T+1 windows."""
    series = np.asarray(series, dtype=np.float64)
    n = series.size
    if n < window_len:
        raise InsufficientDataError(
            f"series of {n} samples shorter than window length {window_len}")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    return [Window(series[i:i + window_len].copy(), participant_id, i)
            for i in range(0, n - window_len + 1, stride)]


def windows_to_series(windows: list[Window]) -> np.ndarray:
    """Invert stride-1 extraction: first window plus each later window's tail."""
    if not windows:
        return np.empty(0)
    ordered = sorted(windows, key=lambda w: w.start_index)
    parts = [ordered[0].values]
    for prev, cur in zip(ordered, ordered[1:]):
        step = cur.start_index - prev.start_index
        parts.append(cur.values[-step:])
    return np.concatenate(parts)


def participant_windows(series: ParticipantSeries, window_len: int = WINDOW_LEN,
                        stride: int = 1) -> list[Window]:
    return make_windows(znorm(series.rri), window_len,
                        participant_id=series.participant_id, stride=stride)


def split_kfold(participants: list[ParticipantSeries], k: int = 5,
                seed: int = 0) -> SplitPlan:
    """Participant-level stratified folds; label ratios stay within one of global."""
    if len(participants) < k:
        raise ContractError(f"{len(participants)} participants cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    test_folds: list[list[str]] = [[] for _ in range(k)]
    for label in LABELS:
        ids = sorted(p.participant_id for p in participants if p.label == label)
        rng.shuffle(ids)
        for i, pid in enumerate(ids):
            test_folds[i % k].append(pid)
    everyone = sorted(p.participant_id for p in participants)
    folds = [(sorted(set(everyone) - set(test)), sorted(test)) for test in test_folds]
    return SplitPlan("kfold5", folds, seed)


def split_loocv(participants: list[ParticipantSeries]) -> SplitPlan:
    if len(participants) < 2:
        raise ContractError("leave-one-out needs at least 2 participants")
    everyone = sorted(p.participant_id for p in participants)
    folds = [(sorted(set(everyone) - {pid}), [pid]) for pid in everyone]
    return SplitPlan("loocv", folds, seed=0)


# -- loaders -----------------------------------------------------------------------

def _parse_rri_file(path: Path) -> np.ndarray:
    values: list[float] = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for tok in line.replace(",", " ").split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ContractError(
                    f"{path.name}:{line_no}: non-numeric value '{tok}'") from None
    if not values:
        raise ContractError(f"{path.name}: no samples")
    return np.asarray(values)


def load_hrv_acc(directory, window_len: int = WINDOW_LEN) -> LoadResult:
    """Load per-participant RRI files labeled by filename prefix.

    ``control_*`` / ``treatment_*`` text or CSV files, one value stream per
    file; an optional ``manifest.json`` ({filename: label}) overrides the
    prefix rule. Participants shorter than one window are excluded with a
    report entry rather than failing the load.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"dataset directory not found: {directory}")
    overrides = {}
    manifest = directory / "manifest.json"
    if manifest.exists():
        overrides = json.loads(manifest.read_text())
    series: list[ParticipantSeries] = []
    report = {"excluded": [], "warnings": []}
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".txt", ".csv") and p.name != "manifest.json")
    for path in files:
        label = overrides.get(path.name)
        if label is None:
            label = next((lab for lab in LABELS if path.stem.startswith(lab + "_")), None)
        if label not in LABELS:
            report["excluded"].append({"file": path.name, "reason": "unknown label"})
            continue
        try:
            rri = _parse_rri_file(path)
        except ContractError as exc:
            report["excluded"].append({"file": path.name, "reason": str(exc)})
            continue
        if rri.size < window_len:
            report["excluded"].append(
                {"file": path.name,
                 "reason": f"only {rri.size} beats, shorter than one window"})
            continue
        series.append(ParticipantSeries(path.stem, rri, label))
    if not series:
        report["warnings"].append("no usable participants found")
    report["loaded"] = len(series)
    return LoadResult(series, report)


# -- synthetic data -----------------------------------------------------------------

_SYNTH_SHAPE = {
    # base ms, slow-wave amp, fast-wave amp, noise std  (slow 0.1 Hz, fast 0.25 Hz)
    "control": (850.0, 60.0, 40.0, 15.0),
    "treatment": (780.0, 15.0, 5.0, 8.0),
}
SYNTH_MIN_BEATS = 4500


def _synth_series(kind: str, rng: np.random.Generator, n_beats: int) -> np.ndarray:
    base, slow, fast, noise = _SYNTH_SHAPE[kind]
    out = np.empty(n_beats)
    eps = rng.normal(0.0, noise, size=n_beats)
    t_s = 0.0
    for k in range(n_beats):
        val = (base + slow * np.sin(2 * np.pi * 0.1 * t_s)
               + fast * np.sin(2 * np.pi * 0.25 * t_s) + eps[k])
        out[k] = val
        t_s += val / 1000.0
    return out


def synth_dataset(n_per_class: int, seed: int) -> list[ParticipantSeries]:
    """Deterministic two-class dataset: high-variability vs blunted generators."""
    if n_per_class < 1:
        raise ContractError("n_per_class must be >= 1")
    series = []
    for label in LABELS:
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, LABELS.index(label), i])
            n_beats = SYNTH_MIN_BEATS + 50 * (i % 5)
            series.append(ParticipantSeries(f"{label}_{i:02d}",
                                            _synth_series(label, rng, n_beats), label))
    return series
