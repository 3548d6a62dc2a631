"""Differentiable training losses.

Each loss accepts predictions as a :class:`~seqsal.recnet.tensor.Tensor` (or
array) shaped ``(H, W)``, ``(N, H, W)`` or ``(N, 1, H, W)`` and targets as
arrays of matching spatial shape. Batched inputs give the mean over the
batch. The returned value is a scalar Tensor, so ``loss.backward()``
reaches the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixdata import FixationMap
from .metrics import KL_EPS, MetricError
from .recnet import tensor as tn
from .recnet.tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 2.0
    gamma: float = 5.0
    delta: float = 1.0
    aux_weight: float = 0.01

    def __post_init__(self):
        w = (self.alpha, self.beta, self.gamma, self.delta, self.aux_weight)
        if any(v < 0 for v in w):
            raise ValueError(f"loss weights must be non-negative, got {w}")
        if max(w[:4]) <= 0:
            raise ValueError("at least one of alpha, beta, gamma, delta must be positive")


def _flat_pred(pred) -> Tensor:
    pred = tn.as_tensor(pred)
    if pred.ndim == 2:
        return pred.reshape(1, pred.shape[0] * pred.shape[1])
    if pred.ndim == 3:
        return pred.reshape(pred.shape[0], pred.shape[1] * pred.shape[2])
    if pred.ndim == 4 and pred.shape[1] == 1:
        return pred.reshape(pred.shape[0], pred.shape[2] * pred.shape[3])
    raise ValueError(f"prediction must be (H, W), (N, H, W) or (N, 1, H, W), got {pred.shape}")


def _flat_target(target, n: int, dtype=np.float64) -> np.ndarray:
    if isinstance(target, FixationMap):
        target = target.grid
    t = np.asarray(target, dtype=dtype)
    if t.ndim == 4 and t.shape[1] == 1:
        t = t[:, 0]
    if t.ndim == 2:
        t = t[None]
    t = t.reshape(t.shape[0], -1)
    if t.shape[0] != n:
        raise ValueError(f"batch mismatch: {n} predictions vs {t.shape[0]} targets")
    return t


def _zscore(p: Tensor) -> Tensor:
    centred = p - p.mean(axis=1, keepdims=True)
    sd = tn.sqrt((centred * centred).mean(axis=1, keepdims=True))
    return centred / sd


def l_kl(pred, target, eps: float = KL_EPS) -> Tensor:
    p = _flat_pred(pred)
    g = _flat_target(target, p.shape[0])
    gsum = g.sum(axis=1, keepdims=True)
    if np.any(gsum <= 0):
        raise MetricError("ground truth must have a positive sum")
    g = g / gsum
    p = p / p.sum(axis=1, keepdims=True)
    per = (tn.log(eps + g / (eps + p)) * g).sum(axis=1)
    return per.mean()


def l_cc(pred, target) -> Tensor:
    p = _flat_pred(pred)
    g = _flat_target(target, p.shape[0])
    dg = g - g.mean(axis=1, keepdims=True)
    if np.any(np.sum(dg * dg, axis=1) == 0):
        raise MetricError("cc is undefined for a constant target")
    dp = p - p.mean(axis=1, keepdims=True)
    num = (dp * dg).sum(axis=1)
    den = tn.sqrt((dp * dp).sum(axis=1) * np.sum(dg * dg, axis=1))
    return (1.0 - num / den).mean()


def l_sim(pred, target) -> Tensor:
    p = _flat_pred(pred)
    g = _flat_target(target, p.shape[0])
    g = g / g.sum(axis=1, keepdims=True)
    p = p / p.sum(axis=1, keepdims=True)
    return (1.0 - tn.minimum(p, g).sum(axis=1)).mean()


def _nss_terms(pred, fix):
    p = _flat_pred(pred)
    f = _flat_target(fix, p.shape[0], dtype=bool).astype(np.float64)
    counts = f.sum(axis=1)
    return _zscore(p), f, counts


def l_nss(pred, fix) -> Tensor:
    z, f, counts = _nss_terms(pred, fix)
    if np.any(counts == 0):
        raise MetricError("nss needs at least one fixation per map")
    per = (z * f).sum(axis=1) / counts
    return -per.mean()


def l_sal(S1, S2, S3, S4, gt_gauss, gt_pts, w: LossWeights = LossWeights(),
          kl_eps: float = KL_EPS) -> Tensor:
    """Weighted sum of KL, 1-CC, 1-SIM on the dense target and -NSS on the fixation map.

    Components with zero weight are not evaluated.
    """
    total = tn.as_tensor(0.0)
    if w.alpha:
        total = total + w.alpha * l_kl(S1, gt_gauss, kl_eps)
    if w.beta:
        total = total + w.beta * l_cc(S2, gt_gauss)
    if w.gamma:
        total = total + w.gamma * l_sim(S3, gt_gauss)
    if w.delta:
        total = total + w.delta * l_nss(S4, gt_pts)
    return total


def l_aux(O, M) -> Tensor:
    """Mean -NSS between auxiliary outputs and metadata maps.

    ``O`` is a sequence of predictions and ``M`` the matching fixation maps
    (each map may be batched). Steps whose map has no fixations are skipped;
    each sample is averaged over its own non-empty steps, then over the batch.
    """
    if len(O) != len(M):
        raise ValueError(f"{len(O)} auxiliary outputs but {len(M)} metadata maps")
    if not O:
        raise MetricError("l_aux needs at least one timestep")
    per_sample = None
    included = None
    for o, m in zip(O, M):
        z, f, counts = _nss_terms(o, m)
        safe = np.where(counts > 0, counts, 1.0)
        # empty maps contribute zero through f == 0
        step = (z * f).sum(axis=1) / safe
        per_sample = step if per_sample is None else per_sample + step
        included = (counts > 0).astype(np.float64) if included is None else included + (counts > 0)
    if np.any(included == 0):
        raise MetricError("every metadata map of a sample is empty; l_aux is undefined")
    return -(per_sample / included).mean()
