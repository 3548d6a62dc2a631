"""Ordered stacks of fixation maps, in incremental or non-incremental form.

A non-incremental stack holds one map per step (fixations of that timestep
or that spatial region). The incremental form accumulates them: step ``t``
holds everything seen up to and including ``t``. Accumulation is a cellwise
OR so maps stay binary.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image

from ._io import atomic_write_bytes, pgm_bytes
from .fixdata import FixationMap


class Mode(str, Enum):
    INCREMENTAL = "incremental"
    NON_INCREMENTAL = "non-incremental"


class Axis(str, Enum):
    TEMPORAL = "temporal"
    SPATIAL = "spatial"


@dataclass(frozen=True)
class MetaStack:
    maps: tuple[FixationMap, ...]
    mode: Mode
    axis: Axis
    stimulus_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "axis", Axis(self.axis))
        shapes = {m.shape for m in self.maps}
        if len(shapes) > 1:
            raise ValueError(f"maps in a stack must share one shape, got {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.maps)

    def __getitem__(self, t) -> FixationMap:
        return self.maps[t]

    def union(self, shape=None) -> FixationMap:
        if not self.maps:
            if shape is None:
                raise ValueError("union of an empty stack needs an explicit shape")
            return FixationMap.empty(shape)
        return FixationMap(np.logical_or.reduce([m.grid for m in self.maps]))

    def as_array(self) -> np.ndarray:
        """Stack as a (T, H, W) boolean array."""
        return np.stack([m.grid for m in self.maps]) if self.maps else np.zeros((0, 0, 0), bool)


def to_incremental(stack: MetaStack) -> MetaStack:
    """Accumulate m_0..m_T into T cumulative maps.

    The would-be last map (union of everything) is dropped since it equals
    the aggregate fixation map used as the final target.
    """
    if stack.mode is not Mode.NON_INCREMENTAL:
        raise ValueError("stack is already incremental; refusing to accumulate twice")
    maps = []
    acc = None
    for m in stack.maps[:-1]:
        acc = m.grid.copy() if acc is None else acc | m.grid
        maps.append(FixationMap(acc))
    return MetaStack(tuple(maps), Mode.INCREMENTAL, stack.axis, stack.stimulus_id)


def validate_stack(stack: MetaStack, aggregate: FixationMap) -> dict[str, bool]:
    """Check the mode/axis invariants and OR-consistency against ``aggregate``.

    Returns a mapping of check name to pass/fail; never raises. For an
    incremental stack the last map is allowed to be a strict subset of the
    aggregate (the full-union map is not stored).
    """
    report = {}
    report["shape"] = all(m.shape == aggregate.shape for m in stack.maps)
    if not report["shape"]:
        return report
    grids = [m.grid for m in stack.maps]
    if stack.mode is Mode.INCREMENTAL:
        report["monotone"] = all(not np.any(prev & ~cur) for prev, cur in zip(grids, grids[1:]))
        union = stack.union(aggregate.shape).grid
        report["or_consistency"] = not np.any(union & ~aggregate.grid)
    else:
        if stack.axis is Axis.SPATIAL:
            total = np.sum(grids, axis=0) if grids else np.zeros(aggregate.shape, int)
            report["disjoint"] = bool(np.all(total <= 1))
        union = stack.union(aggregate.shape)
        report["or_consistency"] = union == aggregate
    return report


# --------------------------------------------------------------------------
# serialization: one 8-bit PGM per step plus a JSON sidecar


def write_metastack(stack: MetaStack, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for t, m in enumerate(stack.maps):
        path = os.path.join(out_dir, f"{stack.stimulus_id}_t{t:02d}.pgm")
        atomic_write_bytes(path, pgm_bytes(m.grid.astype(np.uint8) * 255))
        written.append(path)
    sidecar = {"mode": stack.mode.value, "axis": stack.axis.value, "T": len(stack.maps)}
    path = os.path.join(out_dir, f"{stack.stimulus_id}.json")
    atomic_write_bytes(path, (json.dumps(sidecar) + "\n").encode("utf-8"))
    written.append(path)
    return written


def read_metastack(out_dir, stimulus_id: str) -> MetaStack:
    with open(os.path.join(out_dir, f"{stimulus_id}.json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    maps = []
    for t in range(sidecar["T"]):
        with Image.open(os.path.join(out_dir, f"{stimulus_id}_t{t:02d}.pgm")) as im:
            maps.append(FixationMap(np.asarray(im) > 127))
    return MetaStack(tuple(maps), sidecar["mode"], sidecar["axis"], stimulus_id)
