"""Temporally sequenced fixation maps.

Each map collects the i-th fixation of every observer. The number of maps
for a dataset can be chosen from the "at least i fixations" histogram: fit
a Gaussian peaked at its mode and cut at mu + 2 sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fixdata import Dataset, FixationMap, Scheme, StimulusRecord
from .metastack import Axis, MetaStack, Mode


@dataclass(frozen=True)
class AtLeastHistogram:
    """``counts[i - 1]`` is the number of (observer, stimulus) pairs with >= i fixations."""

    counts: tuple[int, ...]

    def at(self, i: int) -> int:
        if i < 1:
            raise ValueError("histogram is indexed from i = 1")
        return self.counts[i - 1] if i <= len(self.counts) else 0

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, len(self.counts) + 1)


@dataclass(frozen=True)
class TemporalScheme:
    kind: Scheme
    T: int
    first_index: int
    overflow: bool

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.first_index < 1:
            raise ValueError(f"first_index is a 1-based ordinal, got {self.first_index}")

    @classmethod
    def mit(cls, T: int = 5, first_index: int = 2, overflow: bool = False) -> TemporalScheme:
        return cls(Scheme.MIT, T, first_index, overflow)

    @classmethod
    def salicon(cls, T: int = 15, first_index: int = 1, overflow: bool = True) -> TemporalScheme:
        return cls(Scheme.SALICON, T, first_index, overflow)

    @classmethod
    def for_scheme(cls, scheme: Scheme, T: int | None = None) -> TemporalScheme:
        scheme = Scheme(scheme)
        factory = cls.mit if scheme is Scheme.MIT else cls.salicon
        return factory() if T is None else factory(T=T)


def at_least_histogram(dataset: Dataset) -> AtLeastHistogram:
    lengths = np.array([len(sp) for rec in dataset for sp in rec.scanpaths], dtype=np.int64)
    if lengths.size == 0 or lengths.max() == 0:
        return AtLeastHistogram(())
    # number of scanpaths of exact length L, then reverse cumulative sum
    exact = np.bincount(lengths)
    at_least = np.cumsum(exact[::-1])[::-1]
    return AtLeastHistogram(tuple(int(c) for c in at_least[1:]))


def fit_gaussian_histogram(h: AtLeastHistogram) -> tuple[float, float]:
    """Gaussian fit with the mean pinned at the histogram peak.

    ``mu`` is the mode (smallest i on ties). ``sigma`` is the count-weighted
    RMS deviation of i around ``mu``, i.e. the maximum-likelihood scale of a
    Gaussian whose centre is fixed at the peak.
    """
    counts = np.asarray(h.counts, dtype=np.float64)
    if counts.size == 0 or counts.sum() <= 0:
        raise ValueError("cannot fit a Gaussian to an empty histogram")
    i = h.support.astype(np.float64)
    mu = float(i[int(np.argmax(counts))])
    sigma = math.sqrt(float(np.sum(counts * (i - mu) ** 2) / counts.sum()))
    return mu, sigma


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def choose_T(mu: float, sigma: float) -> int:
    """Number of ordered maps: round(mu + 2 sigma), half away from zero."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return round_half_away(mu + 2.0 * sigma)


def scheme_from_histogram(h: AtLeastHistogram) -> TemporalScheme:
    """SALICON-style scheme sized from data: one map per ordinal up to the cut plus an overflow map."""
    mu, sigma = fit_gaussian_histogram(h)
    return TemporalScheme.salicon(T=choose_T(mu, sigma) + 1)


def temporal_maps(record: StimulusRecord, scheme: TemporalScheme) -> MetaStack:
    grids = np.zeros((scheme.T,) + record.shape, dtype=bool)
    last = scheme.first_index + scheme.T - 1  # ordinal held by the final map
    for sp in record.scanpaths:
        for ordinal, (x, y) in enumerate(sp.fixations, start=1):
            if ordinal < scheme.first_index:
                continue
            if ordinal > last:
                if not scheme.overflow:
                    break
                t = scheme.T - 1
            else:
                t = ordinal - scheme.first_index
            grids[t, y, x] = True
    maps = tuple(FixationMap(g) for g in grids)
    return MetaStack(maps, Mode.NON_INCREMENTAL, Axis.TEMPORAL, record.stimulus_id)


def ordinal_fixation_map(record: StimulusRecord, first: int, last: int | None = None) -> FixationMap:
    """Union of fixations whose 1-based ordinal lies in ``first..last``."""
    pts = [
        p
        for sp in record.scanpaths
        for k, p in enumerate(sp.fixations, start=1)
        if k >= first and (last is None or k <= last)
    ]
    return FixationMap.from_points(pts, record.shape)
