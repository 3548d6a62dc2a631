"""Plain gradient-descent training of the toy network on a small batch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..losses import LossWeights, l_aux, l_cc, l_kl, l_nss, l_sim
from .model import NetMode, ToyConfig, ToyNet

TRACE_COLUMNS = ("step", "l_kl", "l_cc", "l_sim", "l_nss", "l_aux", "l_sal", "total")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


@dataclass
class ToyBatch:
    """images (N, C, H, W); gt_gauss (N, H, W); gt_pts (N, H, W) bool;
    meta (N, T, H, W) bool non-incremental metadata maps."""

    images: np.ndarray
    gt_gauss: np.ndarray
    gt_pts: np.ndarray
    meta: np.ndarray

    def targets_for(self, mode: NetMode) -> list[np.ndarray]:
        """Per-step auxiliary targets matching the rollout for ``mode``."""
        mode = NetMode(mode)
        if mode is NetMode.NON_INCREMENTAL:
            return [self.meta[:, t] for t in range(self.meta.shape[1])]
        if mode is NetMode.INCREMENTAL:
            acc = np.logical_or.accumulate(self.meta, axis=1)
            return [acc[:, t] for t in range(self.meta.shape[1] - 1)]
        return []


def objective(model: ToyNet, batch: ToyBatch, w: LossWeights = LossWeights()):
    """Total loss l_sal + aux_weight * l_aux, with the components as floats."""
    out = model(batch.images)
    S1, S2, S3, S4 = out.S
    parts = {
        "l_kl": l_kl(S1, batch.gt_gauss),
        "l_cc": l_cc(S2, batch.gt_gauss),
        "l_sim": l_sim(S3, batch.gt_gauss),
        "l_nss": l_nss(S4, batch.gt_pts),
    }
    l_sal = w.alpha * parts["l_kl"] + w.beta * parts["l_cc"] + w.gamma * parts["l_sim"] + w.delta * parts["l_nss"]
    total = l_sal
    if out.O:
        aux = l_aux(out.O, batch.targets_for(model.cfg.mode))
        parts["l_aux"] = aux
        total = total + w.aux_weight * aux
    record = {k: v.item() for k, v in parts.items()}
    record.setdefault("l_aux", float("nan"))
    record["l_sal"] = l_sal.item()
    record["total"] = total.item()
    return total, record


@dataclass
class TrainResult:
    model: ToyNet
    trace: list[dict]

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.trace])

    def csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for row in self.trace:
            cells = [str(row["step"])] + [repr(float(row[c])) for c in TRACE_COLUMNS[1:]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def train_toy(batch: ToyBatch, cfg: ToyConfig, steps: int = 200, lr: float = 1e-3,
              weights: LossWeights = LossWeights()) -> TrainResult:
    """Full-batch gradient descent; row ``s`` of the trace is the loss before update ``s``."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not lr >= 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    if cfg.mode is not NetMode.BASE and cfg.T != batch.meta.shape[1]:
        raise ValueError(f"cfg.T={cfg.T} but the batch carries {batch.meta.shape[1]} metadata maps")
    model = ToyNet(cfg).train()
    params = list(model.params.values())
    trace = []
    for step in range(1, steps + 1):
        model.zero_grad()
        total, record = objective(model, batch, weights)
        if not math.isfinite(record["total"]):
            raise TrainingDiverged(step, record["total"])
        record["step"] = step
        trace.append(record)
        total.backward()
        for p in params:
            if p.grad is not None:
                p.data -= lr * p.grad
    return TrainResult(model, trace)
