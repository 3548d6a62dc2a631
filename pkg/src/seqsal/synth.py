"""Seeded synthetic fixation data for fixtures, demos and the toy trainer."""

from __future__ import annotations

import numpy as np

from .fixdata import Dataset, ObserverScanpath, Point2D, Scheme, StimulusRecord, aggregate_fixation_map
from .salmap import blur_fixations
from .spatseq import spatial_maps
from .recnet.train import ToyBatch


def _clip_points(pts, width, height):
    pts = np.rint(pts).astype(np.int64)
    pts[:, 0] = np.clip(pts[:, 0], 0, width - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, height - 1)
    return pts


def random_record(rng: np.random.Generator, stimulus_id: str, width: int = 64, height: int = 48,
                  n_observers: int | None = None, max_len: int = 20, n_regions: int = 3,
                  spread: float = 4.0) -> StimulusRecord:
    """Observers hop between a few region centres; scanpath lengths vary from 0 to ``max_len``."""
    if n_observers is None:
        n_observers = int(rng.integers(1, 8))
    centres = rng.uniform([0, 0], [width, height], size=(n_regions, 2))
    scanpaths = []
    for o in range(n_observers):
        length = int(rng.integers(0, max_len + 1))
        which = rng.integers(0, n_regions, size=length)
        pts = _clip_points(centres[which] + rng.normal(0, spread, (length, 2)), width, height)
        scanpaths.append(ObserverScanpath(f"obs{o:02d}", tuple(Point2D(int(x), int(y)) for x, y in pts)))
    return StimulusRecord(stimulus_id, width, height, tuple(scanpaths))


def random_dataset(n_records: int, seed: int = 0, scheme: Scheme = Scheme.SALICON,
                   **kwargs) -> Dataset:
    rng = np.random.default_rng(seed)
    recs = tuple(random_record(rng, f"img{i:04d}", **kwargs) for i in range(n_records))
    return Dataset(recs, Scheme(scheme))


def blob_points(rng, centre, n, spread, width=None, height=None) -> np.ndarray:
    """``n`` distinct integer pixels drawn around ``centre``, inside the image if bounds are given."""
    seen = {}
    while len(seen) < n:
        x, y = (int(v) for v in np.rint(rng.normal(centre, spread)))
        if width is not None and not (0 <= x < width and 0 <= y < height):
            continue
        seen.setdefault((x, y), None)
    return np.array(list(seen), dtype=np.int64)


def region_record(stimulus_id: str = "regions", sizes=(60, 30, 10),
                  centres=((160, 240), (480, 120), (480, 360)), spread: float = 6.0,
                  width: int = 640, height: int = 480, seed: int = 0,
                  n_observers: int = 10) -> StimulusRecord:
    """A scene with a few well-separated fixation regions of given (distinct-pixel) sizes.

    Points are dealt round-robin to observers, so every region is visited by
    several people, as in a real aggregate map.
    """
    rng = np.random.default_rng(seed)
    pts = np.vstack([blob_points(rng, c, n, spread, width, height) for c, n in zip(centres, sizes)])
    pts = pts[rng.permutation(len(pts))]
    paths = [[] for _ in range(n_observers)]
    for i, (x, y) in enumerate(pts):
        paths[i % n_observers].append(Point2D(int(x), int(y)))
    scanpaths = tuple(ObserverScanpath(f"obs{o:02d}", tuple(p)) for o, p in enumerate(paths))
    return StimulusRecord(stimulus_id, width, height, scanpaths)


def three_blobs(seed: int, n_per_blob: int = 100, spread: float = 5.0):
    """Points from three isotropic blobs on an equilateral triangle (side 240 px)."""
    centres = np.array([[200.0, 120.0], [440.0, 120.0], [320.0, 120.0 + 240.0 * np.sqrt(3) / 2]])
    rng = np.random.default_rng(seed)
    pts = np.vstack([rng.normal(c, spread, (n_per_blob, 2)) for c in centres])
    return pts, centres


def toy_batch(n: int = 8, size: int = 32, seed: int = 0, K: int = 3, fc: float = 4.0,
              points_per_region: tuple[int, ...] = (12, 7, 4)) -> ToyBatch:
    """Images with bright blobs at the fixated regions, plus their targets.

    Ground truth is derived through the same pipeline as real data: a
    record of fixations, its aggregate map, the blurred dense map and the
    spatial metadata stack.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    images, gauss, pts_maps, meta = [], [], [], []
    for i in range(n):
        centres = rng.uniform(5, size - 5, size=(K, 2))
        for _ in range(100):
            d = np.linalg.norm(centres[:, None] - centres[None], axis=-1) + np.eye(K) * size
            if d.min() >= size / 4:
                break
            centres = rng.uniform(5, size - 5, size=(K, 2))
        rec = region_record(
            f"toy{i}", sizes=points_per_region[:K], centres=[tuple(c) for c in centres],
            spread=1.2, width=size, height=size, seed=int(rng.integers(1 << 31)), n_observers=3,
        )
        agg = aggregate_fixation_map(rec)
        img = np.zeros((3, size, size))
        for k, (cx, cy) in enumerate(centres):
            blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 2.5**2))
            img[0] += blob * (1.0 - 0.25 * k)
            img[1] += blob * 0.5
        img[2] = rng.normal(0, 0.05, (size, size))
        images.append(img)
        gauss.append(blur_fixations(agg, fc))
        pts_maps.append(agg.grid)
        meta.append(spatial_maps(rec, K, seed=0).as_array())
    return ToyBatch(np.array(images), np.array(gauss), np.array(pts_maps), np.array(meta))
