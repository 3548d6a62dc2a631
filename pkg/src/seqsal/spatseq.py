"""Spatially sequenced fixation maps from a per-image Gaussian mixture.

Aggregate fixation points of one stimulus are clustered with a 2-D GMM
fitted by EM, each point is hard-assigned to its most responsible
component, and the clusters are emitted as binary maps ordered by size
(largest first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .fixdata import FixationMap, StimulusRecord, aggregate_fixation_map
from .metastack import Axis, MetaStack, Mode

DEFAULT_K = 3
DEFAULT_REG = 1e-3
DEFAULT_RESTARTS = 5
MAX_ITER = 200
REL_TOL = 1e-6


class GmmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float
    ll_trace: tuple[float, ...] = field(default=(), repr=False)
    n_iter: int = 0

    @property
    def K(self) -> int:
        return len(self.weights)

    def log_resp(self, points) -> np.ndarray:
        """(n, K) log posterior responsibilities."""
        joint = _log_joint(np.asarray(points, np.float64), self.weights, self.means, self.covariances)
        return joint - logsumexp(joint, axis=1, keepdims=True)

    def predict(self, points) -> np.ndarray:
        """Index of the max-responsibility component for each point."""
        joint = _log_joint(np.asarray(points, np.float64), self.weights, self.means, self.covariances)
        return np.argmax(joint, axis=1)


@dataclass(frozen=True)
class WssCurve:
    """``distortions[K - 1]`` is the WSS of the best K-component fit."""

    distortions: tuple[float, ...]


def _log_gauss(points, mean, cov) -> np.ndarray:
    # closed-form 2x2 inverse and determinant
    a, b, d = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * d - b * b
    if not det > 0:
        raise GmmError("covariance is not positive definite")
    dx = points - mean
    maha = (d * dx[:, 0] ** 2 - 2 * b * dx[:, 0] * dx[:, 1] + a * dx[:, 1] ** 2) / det
    return -0.5 * maha - 0.5 * np.log(det) - np.log(2 * np.pi)


def _log_joint(points, weights, means, covs) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return np.stack(
        [logw[k] + _log_gauss(points, means[k], covs[k]) for k in range(len(weights))], axis=1
    )


def kmeanspp_seeds(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _em(points, means, reg, max_iter=MAX_ITER, tol=REL_TOL) -> GmmModel:
    n = len(points)
    K = len(means)
    eye = np.eye(2)
    centred = points - points.mean(axis=0)
    covs = np.repeat((centred.T @ centred / n + reg * eye)[None], K, axis=0)
    weights = np.full(K, 1.0 / K)
    means = np.array(means, dtype=np.float64)

    trace = []
    ll_prev = None
    it = 0
    for it in range(1, max_iter + 1):
        joint = _log_joint(points, weights, means, covs)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if ll_prev is not None and abs(ll - ll_prev) <= tol * abs(ll_prev):
            break
        ll_prev = ll
        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk <= 1e-10 * n):
            raise GmmError(
                f"component(s) {np.flatnonzero(nk <= 1e-10 * n).tolist()} lost all points; reduce K"
            )
        weights = nk / n
        means = (resp.T @ points) / nk[:, None]
        for k in range(K):
            dx = points - means[k]
            covs[k] = (resp[:, k, None] * dx).T @ dx / nk[k] + reg * eye
    else:
        # ran out of iterations: report the likelihood of the final parameters
        ll = float(logsumexp(_log_joint(points, weights, means, covs), axis=1).sum())
        trace.append(ll)
    return GmmModel(weights, means, covs, trace[-1], tuple(trace), it)


def _check_points(points, K):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if K < 1:
        raise GmmError(f"K must be >= 1, got {K}")
    if len(pts) < K:
        raise GmmError(f"{len(pts)} points cannot support K={K} components; reduce K")
    if K > 1 and len(np.unique(pts, axis=0)) < K:
        raise GmmError(
            f"only {len(np.unique(pts, axis=0))} distinct points for K={K}; "
            "components would collapse, reduce K"
        )
    return pts


def fit_gmm(points, K: int, seed: int = 0, reg: float = DEFAULT_REG) -> GmmModel:
    """Fit a K-component full-covariance GMM to 2-D points with EM.

    Initial means come from k-means++ seeding driven by ``seed``; every
    M-step adds ``reg * I`` to each covariance. Iteration stops when the
    relative log-likelihood change drops below 1e-6, or after 200 steps.
    """
    if not reg > 0:
        raise GmmError(f"reg must be positive, got {reg}")
    pts = _check_points(points, K)
    rng = np.random.default_rng(seed)
    return _em(pts, kmeanspp_seeds(pts, K, rng), reg)


def wss(points, model: GmmModel) -> float:
    """Within-cluster sum of squares under hard max-responsibility assignment."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = model.predict(pts)
    total = 0.0
    for k in np.unique(labels):
        members = pts[labels == k]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def _farthest_point_init(pts, model: GmmModel) -> np.ndarray:
    labels = model.predict(pts)
    d2 = np.sum((pts - model.means[labels]) ** 2, axis=1)
    return np.vstack([model.means, pts[np.argmax(d2)]])


def best_fit(points, K: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
             reg: float = DEFAULT_REG, warm: GmmModel | None = None) -> tuple[GmmModel, float]:
    """Lowest-WSS fit over seeded restarts (plus an optional warm start)."""
    pts = _check_points(points, K)
    candidates = []
    for r in range(restarts):
        rng = np.random.default_rng([seed, K, r])
        candidates.append(_em(pts, kmeanspp_seeds(pts, K, rng), reg))
    if warm is not None and warm.K == K - 1:
        candidates.append(_em(pts, _farthest_point_init(pts, warm), reg))
    scored = [(wss(pts, m), i) for i, m in enumerate(candidates)]
    best_wss, best_i = min(scored)
    return candidates[best_i], best_wss


def wss_curve(points, K_max: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
              reg: float = DEFAULT_REG) -> WssCurve:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < K_max:
        raise GmmError(f"{len(pts)} points cannot support K_max={K_max}; reduce K_max")
    n_distinct = len(np.unique(pts, axis=0))
    out = []
    prev = None
    for K in range(1, K_max + 1):
        if K > n_distinct:
            # every distinct location already has its own cluster
            out.append(0.0)
            continue
        prev, value = best_fit(pts, K, seed, restarts, reg, warm=prev)
        # the K-1 fit plus an empty component is also a K-component model,
        # so the best K value never exceeds the previous one
        out.append(min(value, out[-1]) if out else value)
    return WssCurve(tuple(out))


def elbow(curve: WssCurve) -> int:
    """K with the largest second difference of the WSS curve (smallest K on ties)."""
    w = np.asarray(curve.distortions, dtype=np.float64)
    if len(w) < 3:
        raise ValueError(f"elbow needs at least 3 curve points, got {len(w)}")
    best_k, best_d = None, -np.inf
    for K in range(2, len(w)):
        d = (w[K - 2] - w[K - 1]) - (w[K - 1] - w[K])
        if d > best_d:
            best_k, best_d = K, d
    return best_k


def spatial_maps(record: StimulusRecord, K: int = DEFAULT_K, seed: int = 0, *,
                 reg: float = DEFAULT_REG, skip_first: bool = False,
                 use_elbow: bool = False, K_max: int = 6) -> MetaStack:
    """Cluster a stimulus's aggregate fixations and emit size-ordered region maps.

    With ``use_elbow`` the component count is re-derived per image from the
    WSS curve up to ``K_max`` and ``K`` is ignored.
    """
    agg = aggregate_fixation_map(record, skip_first=skip_first)
    pts = agg.points()
    if use_elbow:
        K_max = min(K_max, len(pts))
        K = elbow(wss_curve(pts, K_max, seed)) if K_max >= 3 else max(1, K_max)
    if len(pts) < K:
        raise GmmError(
            f"stimulus {record.stimulus_id!r} has {len(pts)} fixated pixels, fewer than K={K}"
        )
    model = best_fit(pts, K, seed, reg=reg)[0] if K > 1 else fit_gmm(pts, 1, seed, reg)
    labels = model.predict(pts)
    sizes = np.bincount(labels, minlength=K)
    # stable sort keeps component index order on equal sizes
    order = np.argsort(-sizes, kind="stable")
    maps = tuple(FixationMap.from_points(pts[labels == k], agg.shape) for k in order)
    return MetaStack(maps, Mode.NON_INCREMENTAL, Axis.SPATIAL, record.stimulus_id)
