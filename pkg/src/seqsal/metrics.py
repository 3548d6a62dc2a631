"""Saliency evaluation metrics.

Distribution-based metrics (KL, CC, SIM) compare a prediction with a dense
ground-truth map; location-based metrics (NSS, the AUC family, IG) compare it
with a binary fixation map. Maps are plain 2-D arrays; a
:class:`~seqsal.fixdata.FixationMap` is accepted wherever fixations are.

AUC tie rule: a fixation whose saliency equals the threshold counts as
detected (``>=``), so a constant prediction scores exactly 0.5.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .fixdata import FixationMap

KL_EPS = 1e-7
IG_EPS = 1e-7
N_SPLITS = 100
AUC_TIES = "ge"


class MetricError(ValueError):
    """Inputs violate a metric's preconditions."""


def _as_map(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricError(f"expected a 2-D map, got shape {arr.shape}")
    return arr


def _as_fix(fix) -> np.ndarray:
    grid = fix.grid if isinstance(fix, FixationMap) else np.asarray(fix)
    return grid.astype(bool)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def _sum_normalized(m, name) -> np.ndarray:
    s = m.sum()
    if not s > 0:
        raise MetricError(f"{name} must have a positive sum")
    return m / s


def kl(pred, gt, eps: float = KL_EPS) -> float:
    """KL divergence of the (sum-normalized) ground truth from the prediction."""
    p, g = _as_map(pred), _as_map(gt)
    _same_shape(p, g)
    g = _sum_normalized(g, "ground truth")
    p = _sum_normalized(p, "prediction")
    return float(np.sum(g * np.log(eps + g / (eps + p))))


def cc(a, b) -> float:
    """Pearson correlation of two maps."""
    a, b = _as_map(a), _as_map(b)
    _same_shape(a, b)
    da, db = a - a.mean(), b - b.mean()
    va, vb = np.sum(da * da), np.sum(db * db)
    if va == 0 or vb == 0:
        raise MetricError("cc is undefined for a constant map")
    # rounding can push |r| a hair past 1
    return float(np.clip(np.sum(da * db) / math.sqrt(va * vb), -1.0, 1.0))


def sim(a, b) -> float:
    """Histogram intersection of two sum-normalized maps."""
    a, b = _as_map(a), _as_map(b)
    _same_shape(a, b)
    s = np.sum(np.minimum(_sum_normalized(a, "first map"), _sum_normalized(b, "second map")))
    return float(min(s, 1.0))


def nss(pred, fix) -> float:
    """Mean z-scored saliency at fixated pixels (population SD)."""
    p, f = _as_map(pred), _as_fix(fix)
    _same_shape(p, f)
    if not f.any():
        raise MetricError("nss needs at least one fixation")
    sd = p.std()
    if sd == 0:
        raise MetricError("nss is undefined for a constant prediction")
    return float(np.mean((p[f] - p.mean()) / sd))


def roc_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Area under the ROC traced by thresholding at each positive value.

    TPR and FPR use ``>=`` at every threshold; the curve is anchored at
    (0, 0) and (1, 1) and integrated with the trapezoid rule.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.sort(np.asarray(neg, dtype=np.float64))
    if pos.size == 0:
        raise MetricError("AUC needs at least one fixation")
    if neg.size == 0:
        raise MetricError("AUC needs a non-empty negative set")
    thresholds = np.unique(pos)[::-1]
    pos_sorted = np.sort(pos)
    tp = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fp = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    tpr = np.concatenate([[0.0], tp, [1.0]])
    fpr = np.concatenate([[0.0], fp, [1.0]])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_judd(pred, fix) -> float:
    p, f = _as_map(pred), _as_fix(fix)
    _same_shape(p, f)
    if not f.any():
        raise MetricError("auc_judd needs at least one fixation")
    return roc_auc(p[f], p[~f])


def _split_auc(p, f, pool, n_splits, seed, name):
    if not f.any():
        raise MetricError(f"{name} needs at least one fixation")
    if pool.size == 0:
        raise MetricError(f"{name}: empty negative set")
    pos = p[f]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, pool.size, size=(n_splits, pos.size))
    return float(np.mean([roc_auc(pos, pool[row]) for row in idx]))


def auc_borji(pred, fix, n_splits: int = N_SPLITS, seed: int = 0) -> float:
    """AUC with negatives drawn uniformly (with replacement) from non-fixated pixels."""
    p, f = _as_map(pred), _as_fix(fix)
    _same_shape(p, f)
    return _split_auc(p, f, p[~f], n_splits, seed, "auc_borji")


def sauc(pred, fix, other_fix, n_splits: int = N_SPLITS, seed: int = 0) -> float:
    """Shuffled AUC: negatives drawn from fixation locations of other stimuli."""
    p, f, o = _as_map(pred), _as_fix(fix), _as_fix(other_fix)
    _same_shape(p, f)
    _same_shape(p, o)
    return _split_auc(p, f, p[o], n_splits, seed, "sauc")


def info_gain(pred, fix, baseline, eps: float = IG_EPS) -> float:
    """Mean bits gained over ``baseline`` at fixated pixels."""
    p, f, b = _as_map(pred), _as_fix(fix), _as_map(baseline)
    _same_shape(p, f)
    _same_shape(p, b)
    if not f.any():
        raise MetricError("info_gain needs at least one fixation")
    p = _sum_normalized(p, "prediction")
    b = _sum_normalized(b, "baseline")
    return float(np.mean(np.log2(p[f] + eps) - np.log2(b[f] + eps)))


# --------------------------------------------------------------------------
# reports

METRIC_NAMES = ("kl", "cc", "sim", "nss", "auc_judd", "auc_borji", "sauc", "ig")


@dataclass
class MetricReport:
    kl: float | None = None
    cc: float | None = None
    sim: float | None = None
    nss: float | None = None
    auc_judd: float | None = None
    auc_borji: float | None = None
    sauc: float | None = None
    ig: float | None = None

    def values(self) -> list[float | None]:
        return [getattr(self, f.name) for f in fields(self)]

    def csv_row(self, label: str = "", digits: int = 6) -> str:
        cells = ["" if v is None else f"{v:.{digits}f}" for v in self.values()]
        return ",".join([label] + cells)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def mean(cls, reports: list[MetricReport]) -> MetricReport:
        out = {}
        for name in METRIC_NAMES:
            vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
            out[name] = float(np.mean(vals)) if vals else None
        return cls(**out)


def evaluate(pred, gt_dense, fix, *, other_fix=None, baseline=None, kl_eps: float = KL_EPS,
             ig_eps: float = IG_EPS, n_splits: int = N_SPLITS, seed: int = 0) -> MetricReport:
    """Full metric suite for one stimulus; sAUC/IG are skipped when their extra inputs are absent."""
    report = MetricReport(
        kl=kl(pred, gt_dense, kl_eps),
        cc=cc(pred, gt_dense),
        sim=sim(pred, gt_dense),
        nss=nss(pred, fix),
        auc_judd=auc_judd(pred, fix),
        auc_borji=auc_borji(pred, fix, n_splits, seed),
    )
    if other_fix is not None and _as_fix(other_fix).any():
        report.sauc = sauc(pred, fix, other_fix, n_splits, seed)
    if baseline is not None:
        report.ig = info_gain(pred, fix, baseline, ig_eps)
    return report
