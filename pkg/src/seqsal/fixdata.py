"""Fixation dataset model, JSON interchange I/O and aggregate fixation maps.

The interchange format is a single UTF-8 JSON document::

    {"scheme": "salicon" | "mit",
     "records": [{"stimulus_id": str, "width": int, "height": int,
                  "scanpaths": [{"observer_id": str,
                                 "fixations": [[x, y], ...]}]}]}

Coordinates are integer pixel indices (x = column, y = row). Fixations are
kept in the order they are listed, which is their temporal order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from ._io import atomic_write_text


class DatasetParseError(ValueError):
    """The file is not valid JSON or does not follow the interchange schema."""


class ValidationError(ValueError):
    """A structurally valid dataset violates a semantic constraint."""


class Scheme(str, Enum):
    SALICON = "salicon"
    MIT = "mit"


class Point2D(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class ObserverScanpath:
    observer_id: str
    fixations: tuple[Point2D, ...] = ()

    def __len__(self) -> int:
        return len(self.fixations)


@dataclass(frozen=True)
class StimulusRecord:
    stimulus_id: str
    width: int
    height: int
    scanpaths: tuple[ObserverScanpath, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"stimulus {self.stimulus_id!r}: width and height must be positive, "
                f"got {self.width}x{self.height}"
            )
        for sp in self.scanpaths:
            for k, (x, y) in enumerate(sp.fixations):
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValidationError(
                        f"stimulus {self.stimulus_id!r}, observer {sp.observer_id!r}: "
                        f"fixation #{k + 1} at (x={x}, y={y}) is outside "
                        f"0..{self.width - 1} x 0..{self.height - 1}"
                    )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_fixations(self) -> int:
        return sum(len(sp) for sp in self.scanpaths)


@dataclass(frozen=True)
class Dataset:
    records: tuple[StimulusRecord, ...]
    scheme: Scheme = Scheme.SALICON

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.stimulus_id in seen:
                raise ValidationError(f"duplicate stimulus_id {rec.stimulus_id!r}")
            seen.add(rec.stimulus_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, stimulus_id: str) -> StimulusRecord:
        for rec in self.records:
            if rec.stimulus_id == stimulus_id:
                return rec
        raise KeyError(stimulus_id)


@dataclass(frozen=True, eq=False)
class FixationMap:
    """Binary height x width grid of fixated pixels."""

    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise ValueError(f"fixation map must be 2-D, got shape {grid.shape}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def points(self) -> np.ndarray:
        """Set pixels as an (n, 2) integer array of (x, y), row-major order."""
        ys, xs = np.nonzero(self.grid)
        return np.stack([xs, ys], axis=1)

    def __eq__(self, other):
        if not isinstance(other, FixationMap):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool(np.array_equal(self.grid, other.grid))

    def __or__(self, other: FixationMap) -> FixationMap:
        return FixationMap(self.grid | other.grid)

    def __and__(self, other: FixationMap) -> FixationMap:
        return FixationMap(self.grid & other.grid)

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> FixationMap:
        return cls(np.zeros(shape, dtype=bool))

    @classmethod
    def from_points(cls, points: Iterable[tuple[int, int]], shape: tuple[int, int]) -> FixationMap:
        grid = np.zeros(shape, dtype=bool)
        pts = np.asarray(list(points), dtype=np.int64).reshape(-1, 2)
        if len(pts):
            grid[pts[:, 1], pts[:, 0]] = True
        return cls(grid)


def aggregate_fixation_map(record: StimulusRecord, skip_first: bool = False) -> FixationMap:
    """Union of all observers' fixations on one stimulus.

    With ``skip_first`` the first fixation of every observer is left out
    (the MIT1003 convention, which discards the initial centre-bias point).
    """
    start = 1 if skip_first else 0
    pts = [p for sp in record.scanpaths for p in sp.fixations[start:]]
    return FixationMap.from_points(pts, record.shape)


# --------------------------------------------------------------------------
# JSON interchange


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetParseError(f"{where}: missing key {key!r}")
    val = obj[key]
    # bool is an int subclass; reject it explicitly
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise DatasetParseError(f"{where}: {key!r} must be an integer, got {val!r}")
    if kind is not int and not isinstance(val, kind):
        raise DatasetParseError(f"{where}: {key!r} must be {kind.__name__}, got {type(val).__name__}")
    return val


def _parse_point(raw, where) -> Point2D:
    if (
        not isinstance(raw, list)
        or len(raw) != 2
        or any(isinstance(v, bool) or not isinstance(v, int) for v in raw)
    ):
        raise DatasetParseError(f"{where}: fixation must be [x, y] integers, got {raw!r}")
    return Point2D(raw[0], raw[1])


def dataset_from_dict(doc) -> Dataset:
    if not isinstance(doc, dict):
        raise DatasetParseError("top level must be a JSON object")
    scheme_raw = _require(doc, "scheme", str, "top level")
    try:
        scheme = Scheme(scheme_raw)
    except ValueError:
        raise DatasetParseError(f"top level: unknown scheme {scheme_raw!r}") from None
    records = []
    for i, rec in enumerate(_require(doc, "records", list, "top level")):
        where = f"record {i}"
        sid = _require(rec, "stimulus_id", str, where)
        where = f"record {i} (stimulus_id={sid!r})"
        width = _require(rec, "width", int, where)
        height = _require(rec, "height", int, where)
        scanpaths = []
        for j, sp in enumerate(_require(rec, "scanpaths", list, where)):
            sp_where = f"{where}, scanpath {j}"
            oid = _require(sp, "observer_id", str, sp_where)
            sp_where = f"{where}, observer {oid!r}"
            fix = tuple(
                _parse_point(p, f"{sp_where}, fixation {k}")
                for k, p in enumerate(_require(sp, "fixations", list, sp_where))
            )
            scanpaths.append(ObserverScanpath(oid, fix))
        records.append(StimulusRecord(sid, width, height, tuple(scanpaths)))
    return Dataset(tuple(records), scheme)


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "scheme": dataset.scheme.value,
        "records": [
            {
                "stimulus_id": rec.stimulus_id,
                "width": rec.width,
                "height": rec.height,
                "scanpaths": [
                    {"observer_id": sp.observer_id, "fixations": [[p.x, p.y] for p in sp.fixations]}
                    for sp in rec.scanpaths
                ],
            }
            for rec in dataset.records
        ],
    }


def parse_dataset(path) -> Dataset:
    """Read and validate a dataset in the JSON interchange format."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(
            f"{os.fspath(path)}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return dataset_from_dict(doc)


def dumps_dataset(dataset: Dataset) -> str:
    return json.dumps(dataset_to_dict(dataset), separators=(",", ":"), ensure_ascii=False) + "\n"


def write_dataset(dataset: Dataset, path) -> None:
    atomic_write_text(path, dumps_dataset(dataset))
