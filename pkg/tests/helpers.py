"""Fixture builders shared by several test modules."""

import numpy as np

from seqsal.fixdata import Dataset, ObserverScanpath, Point2D, Scheme, StimulusRecord


def record_from_lengths(lengths, sid="s", width=40, height=40):
    paths = tuple(
        ObserverScanpath(f"o{j}", tuple(Point2D(k % width, (k // width) % height) for k in range(n)))
        for j, n in enumerate(lengths)
    )
    return StimulusRecord(sid, width, height, paths)


def dataset_from_lengths(lengths, scheme=Scheme.SALICON):
    return Dataset(tuple(record_from_lengths([n], f"s{i:04d}") for i, n in enumerate(lengths)), scheme)


def viewing_histogram_fixture(n=200, scale=6.8, cap=35):
    """Scanpath lengths at evenly spaced quantiles of a Rayleigh law.

    The at-least histogram of such lengths falls off like exp(-i^2 / 2 scale^2)
    from its peak at i = 1, the shape of typical free-viewing data; lengths
    are capped the way a viewing-time limit would cap them.
    """
    q = (np.arange(n) + 0.5) / n
    lengths = np.ceil(scale * np.sqrt(-2.0 * np.log1p(-q))).astype(int)
    return dataset_from_lengths(np.minimum(lengths, cap))
