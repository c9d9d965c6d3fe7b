"""Time- and frequency-domain heart-rate-variability metrics.

Time-domain statistics follow the exact summation forms (population SDNN,
strict >50 ms for pNN50). Spectral band powers come from Welch's method on
the RRI signal resampled to a uniform 4 Hz grid (RRIs are unevenly
spaced by nature); LF is 0.04-0.15 Hz and HF 0.15-0.40 Hz.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ContractError, InsufficientDataError

LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
RESAMPLE_HZ = 4.0
MIN_SPECTRAL_SECONDS = 30.0   # LF's 0.04 Hz floor needs >= ~25 s for one cycle

UNITS = {
    "mean_rr": "ms", "rmssd": "ms", "sdnn": "ms", "pnn50": "percent",
    "lf_power": "ms^2", "hf_power": "ms^2", "lf_hf_ratio": "dimensionless",
    "n_beats": "count",
}


@dataclass
class HrvFeatures:
    mean_rr: float
    rmssd: float | None
    sdnn: float
    pnn50: float | None
    lf_power: float | None
    hf_power: float | None
    lf_hf_ratio: float | None
    n_beats: int
    segment: tuple[int, int] | str
    flags: list[str]

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["segment"] = list(self.segment) if isinstance(self.segment, tuple) else self.segment
        out["units"] = dict(UNITS)
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HrvFeatures":
        doc = {k: v for k, v in doc.items() if k != "units"}
        if isinstance(doc.get("segment"), list):
            doc["segment"] = tuple(doc["segment"])
        return cls(**doc)


def time_domain(rri_segment: np.ndarray) -> dict:
    """Mean RR, RMSSD, population SDNN, and strict-threshold pNN50."""
    x = np.asarray(rri_segment, dtype=np.float64)
    if x.size == 0:
        raise InsufficientDataError("empty RRI segment")
    mean_rr = float(x.mean())
    sdnn = float(np.sqrt(((x - mean_rr) ** 2).mean()))
    if x.size < 2:
        return {"mean_rr": mean_rr, "rmssd": None, "sdnn": sdnn, "pnn50": None}
    diffs = np.diff(x)
    rmssd = float(np.sqrt((diffs ** 2).mean()))
    pnn50 = float(100.0 * (np.abs(diffs) > 50.0).mean())
    return {"mean_rr": mean_rr, "rmssd": rmssd, "sdnn": sdnn, "pnn50": pnn50}


def resample_rri(rri_segment: np.ndarray, fs: float = RESAMPLE_HZ) -> np.ndarray:
    """Cubic-spline the beat-indexed RRIs onto a uniform grid; mean removed.

    Beat k sits at the cumulative time of all preceding intervals; a final
    knot at the total duration (holding the last value) lets the grid
    cover the whole recording.
    """
    x = np.asarray(rri_segment, dtype=np.float64)
    if x.size < 4:
        raise InsufficientDataError("resampling needs at least 4 beats")
    times = np.concatenate([[0.0], np.cumsum(x) / 1000.0])
    values = np.concatenate([x, [x[-1]]])
    grid = np.arange(0.0, times[-1] + 1e-9, 1.0 / fs)
    resampled = CubicSpline(times, values)(grid)
    return resampled - resampled.mean()


def welch_psd(series: np.ndarray, fs: float = RESAMPLE_HZ) -> tuple[np.ndarray, np.ndarray]:
    """Averaged periodogram over Hann-windowed 50%-overlapping segments.

    Density normalization: the integral of the PSD over [0, fs/2]
    approximates the series variance.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size < 16:
        raise InsufficientDataError("spectral estimate needs at least 16 samples")
    seg_len = min(256, x.size)
    hop = seg_len // 2
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(seg_len) / seg_len)
    scale = 1.0 / (fs * (window ** 2).sum())
    n_segments = 1 + (x.size - seg_len) // hop
    pxx = np.zeros(seg_len // 2 + 1)
    for k in range(n_segments):
        seg = x[k * hop:k * hop + seg_len]
        seg = seg - seg.mean()
        spec = np.abs(np.fft.rfft(window * seg)) ** 2 * scale
        spec[1:] *= 2.0
        if seg_len % 2 == 0:
            spec[-1] /= 2.0
        pxx += spec
    pxx /= n_segments
    freqs = np.fft.rfftfreq(seg_len, d=1.0 / fs)
    return freqs, pxx


def band_power(freqs: np.ndarray, pxx: np.ndarray, lo: float,
               hi: float) -> tuple[float, bool]:
    """Trapezoidal integral of the PSD over [lo, hi].

    Band edges are linearly interpolated so adjacent bands add exactly.
    Returns (power, narrow_band): when no spectral bin falls inside the
    band the power is 0 and the flag is set.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    pxx = np.asarray(pxx, dtype=np.float64)
    if not lo < hi:
        raise ContractError("band requires lo < hi")
    if hi > freqs.max() + 1e-12:
        raise ContractError(f"band edge {hi} beyond spectrum maximum {freqs.max()}")
    inside = (freqs >= lo) & (freqs <= hi)
    if not inside.any():
        return 0.0, True
    grid = np.unique(np.concatenate([[lo, hi], freqs[(freqs > lo) & (freqs < hi)]]))
    vals = np.interp(grid, freqs, pxx)
    return float(np.trapezoid(vals, grid)), False


def _spectral_features(segment: np.ndarray) -> tuple[float | None, float | None,
                                                     float | None, list[str]]:
    flags: list[str] = []
    duration_s = float(np.sum(segment) / 1000.0)
    if duration_s < MIN_SPECTRAL_SECONDS:
        return None, None, None, ["too-short-for-frequency"]
    resampled = resample_rri(segment)
    try:
        freqs, pxx = welch_psd(resampled)
    except InsufficientDataError:
        return None, None, None, ["too-short-for-frequency"]
    lf, lf_narrow = band_power(freqs, pxx, *LF_BAND)
    hf, hf_narrow = band_power(freqs, pxx, *HF_BAND)
    if lf_narrow or hf_narrow:
        flags.append("narrow-band")
    ratio = (lf / hf) if hf > 0 else None
    if hf == 0:
        flags.append("zero-hf-power")
    return lf, hf, ratio, flags


def _features(segment: np.ndarray, tag) -> HrvFeatures:
    td = time_domain(segment)
    lf, hf, ratio, flags = _spectral_features(segment)
    return HrvFeatures(mean_rr=td["mean_rr"], rmssd=td["rmssd"], sdnn=td["sdnn"],
                       pnn50=td["pnn50"], lf_power=lf, hf_power=hf,
                       lf_hf_ratio=ratio, n_beats=int(np.size(segment)),
                       segment=tag, flags=flags)


def baseline_metrics(rri_series: np.ndarray) -> HrvFeatures:
    """Whole-recording feature record."""
    x = np.asarray(rri_series, dtype=np.float64)
    if x.size < 2:
        raise InsufficientDataError("baseline metrics need at least 2 beats")
    return _features(x, "full")


def region_metrics(rri_series: np.ndarray, regions) -> list[HrvFeatures]:
    """One feature record per discrepancy region (inclusive index spans)."""
    x = np.asarray(rri_series, dtype=np.float64)
    out = []
    for region in regions:
        start, end = int(region.start), int(region.end)
        if not (0 <= start <= end < x.size):
            raise ContractError(f"region ({start}, {end}) outside series of {x.size}")
        out.append(_features(x[start:end + 1], (start, end)))
    return out
