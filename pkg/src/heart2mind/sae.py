"""Self-adversarial explanations: attention vs gradient importance maps.

Two per-timestep importance maps are derived from the same forward pass:
one from recorded attention weights, one Grad-CAM style from gradients of
the pre-sigmoid score at the same two layers. The attention map is
DTW-aligned to the gradient map; index spans where their absolute
difference exceeds a threshold (after gap merging) become discrepancy
regions, and too many regions flag the prediction for review.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .mstft import ForwardTrace, MstftModel

TARGET_ATTENTION_LAYERS = ("fusion", "self_attention")
TARGET_ACTIVATION_LAYERS = ("fusion.out", "self_attention.out")
DISCREPANCY_THRESHOLD = 0.5     # on |aligned attention - gradient|
GAP_TOLERANCE = 10              # samples between mask runs that still merge
FLAG_THRESHOLD = 5              # review when region count exceeds this
SCHEMA_VERSION = 1


@dataclass
class ExplanationMap:
    values: np.ndarray          # length T, normalized to [0, 1]
    kind: str                   # attention | gradient
    source_layers: list[str]


@dataclass
class DiscrepancyRegion:
    start: int                  # inclusive
    end: int                    # inclusive
    peak_discrepancy: float
    hrv: object | None = None   # HrvFeatures attached downstream

    def to_json_dict(self) -> dict:
        doc = {"start": self.start, "end": self.end, "peak": self.peak_discrepancy}
        if self.hrv is not None:
            doc["hrv"] = self.hrv.to_json_dict()
        return doc


@dataclass
class SaeResult:
    e_attn: ExplanationMap
    e_grad: ExplanationMap
    e_attn_aligned: np.ndarray
    d_map: np.ndarray
    regions: list[DiscrepancyRegion]
    flagged: bool
    prob: float = field(default=float("nan"))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "e_attn": [float(v) for v in self.e_attn.values],
            "e_grad": [float(v) for v in self.e_grad.values],
            "d_map": [float(v) for v in self.d_map],
            "regions": [r.to_json_dict() for r in self.regions],
            "flagged": self.flagged,
        }


def normalize_map(v: np.ndarray) -> np.ndarray:
    """Z-score then min-max to [0,1]; constant input maps to all 0.5."""
    v = np.asarray(v, dtype=np.float64)
    std = v.std()
    if std == 0.0 or not np.isfinite(std):
        return np.full(v.shape, 0.5)
    z = (v - v.mean()) / std
    lo, hi = z.min(), z.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (z - lo) / (hi - lo)


def aggregate_window_maps(window_maps: list[tuple[int, np.ndarray]],
                          total_len: int) -> np.ndarray:
    """Average per-window maps onto a whole-recording axis.

    ``window_maps`` holds (window start index, map over that window);
    positions covered by several overlapping windows get the mean of
    their contributions, uncovered positions stay 0.
    """
    acc = np.zeros(total_len)
    counts = np.zeros(total_len)
    for start, values in window_maps:
        values = np.asarray(values, dtype=np.float64)
        end = start + values.size
        if start < 0 or end > total_len:
            raise ContractError(f"window [{start}, {end}) outside recording "
                                f"of length {total_len}")
        acc[start:end] += values
        counts[start:end] += 1
    covered = counts > 0
    acc[covered] /= counts[covered]
    return acc


def expand(values: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly interpolate an internal-length map onto the signal grid."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n > target_len:
        raise ContractError(f"cannot expand length {n} down to {target_len}")
    if n == target_len:
        return values.copy()
    if n == 1:
        return np.full(target_len, values[0])
    return np.interp(np.linspace(0.0, n - 1, target_len), np.arange(n), values)


def _attention_map_from_trace(trace: ForwardTrace, target_len: int,
                              reduce: str = "queries") -> np.ndarray:
    per_layer = []
    for layer in TARGET_ATTENTION_LAYERS:
        if layer not in trace.attention:
            raise ContractError(f"trace missing attention weights for '{layer}'")
        w = trace.attention[layer].data    # [B, heads, Lq, Lk]
        head_mean = w.mean(axis=1)[0]      # [Lq, Lk]
        axis = 0 if reduce == "queries" else 1
        per_layer.append(head_mean.mean(axis=axis))
    combined = np.mean(per_layer, axis=0)
    return normalize_map(expand(combined, target_len))


def _gradient_map_from_trace(trace: ForwardTrace, target_len: int,
                             sign: float) -> np.ndarray:
    per_layer = []
    for layer in TARGET_ACTIVATION_LAYERS:
        node = trace.activations.get(layer)
        if node is None or node.grad is None:
            raise ContractError(f"trace missing gradients for activation '{layer}'")
        grads = sign * node.grad[0]        # [L, C]
        acts = node.data[0]
        alpha = grads.mean(axis=0)         # per-channel weight
        per_layer.append(np.maximum(acts @ alpha, 0.0))
    combined = np.mean(per_layer, axis=0)
    return normalize_map(expand(combined, target_len))


def attention_explanation(model: MstftModel, window: np.ndarray,
                          reduce: str = "queries") -> ExplanationMap:
    """Head- and layer-averaged attention received per position."""
    if reduce not in ("queries", "keys"):
        raise ContractError("reduce must be 'queries' or 'keys'")
    trace = model.forward(np.atleast_2d(window), mode="eval")
    values = _attention_map_from_trace(trace, model.hyper.window_len, reduce)
    return ExplanationMap(values, "attention", list(TARGET_ATTENTION_LAYERS))


def gradient_explanation(model: MstftModel, window: np.ndarray,
                         target: str = "predicted") -> ExplanationMap:
    """CAM-style map from gradients of the pre-sigmoid score.

    ``target="positive"`` explains the treatment score; ``"predicted"``
    negates it for control predictions so both classes give usable maps.
    """
    if target not in ("positive", "predicted"):
        raise ContractError("target must be 'positive' or 'predicted'")
    trace = model.forward(np.atleast_2d(window), mode="eval")
    trace.logit_node.sum().backward()
    sign = -1.0 if (target == "predicted" and trace.prob[0] < 0.5) else 1.0
    values = _gradient_map_from_trace(trace, model.hyper.window_len, sign)
    return ExplanationMap(values, "gradient", list(TARGET_ACTIVATION_LAYERS))


# -- dynamic time warping ---------------------------------------------------------

def _dtw_path(a: np.ndarray, b: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Boundary-anchored optimal path with steps {(1,0),(0,1),(1,1)}.

    Local cost is the squared difference; ties prefer the diagonal step.
    """
    n, m = a.size, b.size
    cost = (a[:, None] - b[None, :]) ** 2
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        ci = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = ci[j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    path = []
    i, j = n, m
    while i > 0 or j > 0:
        path.append((i - 1, j - 1))
        if i == 1 and j == 1:
            break
        candidates = []
        if i > 1 and j > 1:
            candidates.append((acc[i - 1, j - 1], 0, (i - 1, j - 1)))
        if i > 1:
            candidates.append((acc[i - 1, j], 1, (i - 1, j)))
        if j > 1:
            candidates.append((acc[i, j - 1], 2, (i, j - 1)))
        _, _, (i, j) = min(candidates, key=lambda c: (c[0], c[1]))
    path.reverse()
    return path, float(acc[n, m])


def dtw_cost(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("DTW inputs must be non-empty")
    return _dtw_path(a, b)[1]


def dtw_align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Warp ``a`` onto ``b``'s time axis: mean of matched a-values per b index."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("DTW inputs must be non-empty")
    path, _ = _dtw_path(a, b)
    sums = np.zeros(b.size)
    counts = np.zeros(b.size)
    for i, j in path:
        sums[j] += a[i]
        counts[j] += 1
    return sums / counts


# -- discrepancy extraction ----------------------------------------------------------

def _mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for idx, flagged in enumerate(mask):
        if flagged and start is None:
            start = idx
        elif not flagged and start is not None:
            runs.append((start, idx - 1))
            start = None
    if start is not None:
        runs.append((start, mask.size - 1))
    return runs


def merge_runs(runs: list[tuple[int, int]], gap_tolerance: int) -> list[tuple[int, int]]:
    """Fuse runs whose separating gap is <= the tolerance."""
    if not runs:
        return []
    merged = [runs[0]]
    for start, end in runs[1:]:
        last_start, last_end = merged[-1]
        if start - last_end - 1 <= gap_tolerance:
            merged[-1] = (last_start, end)
        else:
            merged.append((start, end))
    return merged


def discrepancy(e_attn_aligned: np.ndarray, e_grad: np.ndarray,
                rho: float = DISCREPANCY_THRESHOLD,
                delta: int = GAP_TOLERANCE) -> tuple[np.ndarray, list[DiscrepancyRegion]]:
    """Absolute difference map and its gap-merged above-threshold regions."""
    a = np.asarray(e_attn_aligned, dtype=np.float64)
    g = np.asarray(e_grad, dtype=np.float64)
    if a.shape != g.shape:
        raise ContractError(f"map lengths differ: {a.shape} vs {g.shape}")
    d_map = np.abs(a - g)
    runs = _mask_runs(d_map > rho)
    regions = [DiscrepancyRegion(start, end, float(d_map[start:end + 1].max()))
               for start, end in merge_runs(runs, delta)]
    return d_map, regions


def flag(regions: list, flag_threshold: int = FLAG_THRESHOLD) -> bool:
    """Review flag: strictly more regions than the threshold."""
    return len(regions) > flag_threshold


def explain(model: MstftModel, window: np.ndarray, *, target: str = "predicted",
            rho: float = DISCREPANCY_THRESHOLD, delta: int = GAP_TOLERANCE,
            flag_threshold: int = FLAG_THRESHOLD,
            attn_reduce: str = "queries") -> SaeResult:
    """One forward pass -> both maps, alignment, regions, and the flag."""
    trace = model.forward(np.atleast_2d(window), mode="eval")
    trace.logit_node.sum().backward()
    t_len = model.hyper.window_len
    attn_values = _attention_map_from_trace(trace, t_len, attn_reduce)
    sign = -1.0 if (target == "predicted" and trace.prob[0] < 0.5) else 1.0
    grad_values = _gradient_map_from_trace(trace, t_len, sign)
    aligned = dtw_align(attn_values, grad_values)
    d_map, regions = discrepancy(aligned, grad_values, rho, delta)
    return SaeResult(
        e_attn=ExplanationMap(attn_values, "attention", list(TARGET_ATTENTION_LAYERS)),
        e_grad=ExplanationMap(grad_values, "gradient", list(TARGET_ACTIVATION_LAYERS)),
        e_attn_aligned=aligned,
        d_map=d_map,
        regions=regions,
        flagged=flag(regions, flag_threshold),
        prob=float(trace.prob[0]),
    )
