"""Segmentation metrics with the benchmark's absence and ignore rules.

Conventions
-----------
* A surface voxel is a foreground voxel with at least one background
  6-neighbour; voxels outside the grid count as background.
* Surface distances are between voxel centres, in mm.
* HD95 and ASD are computed on the pooled symmetric multiset of
  surface-to-surface distances (both directions together).
* An empty mask on either side is replaced by the all-foreground grid
  before HD95/ASD are computed.
* DSC and SEN are not applicable when the reference mask is empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .distance import squared_distances_at
from .taxonomy import MULTICLASS_TARGETS, Taxonomy
from .volume import BinaryMask, GridMismatchError, LabelVolume

__all__ = [
    "NA",
    "Task",
    "MetricRecord",
    "SurfaceDistanceSet",
    "dice",
    "surface",
    "surface_distances",
    "hd95_asd",
    "avd",
    "sensitivity",
    "evaluate_case",
    "task_view",
    "nanmean",
    "METRICS",
]

NA = None
"""The NOT_APPLICABLE state; serialized as ``"NA"``."""

METRICS = ("dsc", "hd95", "asd", "avd", "sen")


class Task(str, Enum):
    LUNG = "lung"
    BIN = "bin"
    MULTICLASS = "mc"

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, Task):
            return value
        v = str(value).strip().lower()
        aliases = {"lung": cls.LUNG, "bin": cls.BIN, "binary": cls.BIN, "mc": cls.MULTICLASS,
                   "multiclass": cls.MULTICLASS}
        if v not in aliases:
            raise ValueError(f"unknown task {value!r}")
        return aliases[v]


@dataclass(frozen=True)
class MetricRecord:
    case_id: str
    method_id: str
    task: Task
    eval_class: str
    dsc: float | None = NA
    hd95: float | None = NA
    asd: float | None = NA
    avd: float | None = NA
    sen: float | None = NA

    def get(self, metric: str):
        return getattr(self, metric)

    @property
    def key(self):
        return (self.case_id, self.method_id, self.eval_class, self.task)


@dataclass(frozen=True)
class SurfaceDistanceSet:
    d_ab: np.ndarray = field(repr=False)
    d_ba: np.ndarray = field(repr=False)

    def pooled(self) -> np.ndarray:
        return np.concatenate([self.d_ab, self.d_ba])


def _check(a: BinaryMask, b: BinaryMask) -> None:
    a.check_grid(b)


def nanmean(values) -> float | None:
    """Mean over applicable entries; ``NA`` when there are none.

    ``math.fsum`` makes the result independent of summation order.
    """
    vals = [float(v) for v in values if v is not NA]
    if not vals:
        return NA
    return math.fsum(vals) / len(vals)


def dice(pred: BinaryMask, gt: BinaryMask) -> float | None:
    _check(pred, gt)
    n_gt = gt.count
    if n_gt == 0:
        return NA
    inter = int(np.count_nonzero(pred.data & gt.data))
    return 2.0 * inter / (pred.count + n_gt)


def surface(mask: BinaryMask) -> BinaryMask:
    m = mask.data
    if not m.any():
        return BinaryMask(m, mask.spacing)
    padded = np.pad(m, 1, constant_values=False)
    c = padded[1:-1, 1:-1, 1:-1]
    interior = (
        c
        & padded[:-2, 1:-1, 1:-1] & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1] & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2] & padded[1:-1, 1:-1, 2:]
    )
    return BinaryMask(m & ~interior, mask.spacing)


def _bbox(*masks):
    union = masks[0]
    for m in masks[1:]:
        union = union | m
    idx = [np.flatnonzero(union.any(axis=tuple(a for a in range(3) if a != ax))) for ax in range(3)]
    return tuple(slice(int(i[0]), int(i[-1]) + 1) for i in idx)


def surface_distances(a: BinaryMask, b: BinaryMask) -> SurfaceDistanceSet:
    """Directed surface distance multisets between two nonempty masks."""
    _check(a, b)
    if a.count == 0 or b.count == 0:
        raise ValueError("surface distances need two nonempty masks")
    sa, sb = surface(a).data, surface(b).data
    # every site and query lies inside the joint bounding box, so cropping is exact
    box = _bbox(sa, sb)
    sa, sb = sa[box], sb[box]
    sp = a.spacing.as_tuple()
    d_ab = np.sqrt(squared_distances_at(sb, sa, sp))
    d_ba = np.sqrt(squared_distances_at(sa, sb, sp))
    return SurfaceDistanceSet(d_ab, d_ba)


def hd95_asd(pred: BinaryMask, gt: BinaryMask, pooled: bool = True) -> tuple[float, float]:
    """95th-percentile Hausdorff distance and average surface distance, in mm.

    ``pooled=False`` switches ASD to the mean of the two directed means.
    """
    _check(pred, gt)
    if pred.count == 0:
        pred = BinaryMask.full(pred.dims, pred.spacing)
    if gt.count == 0:
        gt = BinaryMask.full(gt.dims, gt.spacing)
    ds = surface_distances(pred, gt)
    d = ds.pooled()
    hd95 = float(np.percentile(d, 95))
    if pooled:
        asd = float(d.mean())
    else:
        asd = 0.5 * (float(ds.d_ab.mean()) + float(ds.d_ba.mean()))
    return hd95, asd


def avd(pred: BinaryMask, gt: BinaryMask) -> float:
    """Absolute volume difference in ml."""
    _check(pred, gt)
    return abs(pred.count - gt.count) * gt.spacing.voxel_volume_ml


def sensitivity(lung_pred: BinaryMask, lesion_gt: BinaryMask) -> float | None:
    """Fraction of reference lesion voxels covered by a predicted lung mask."""
    _check(lung_pred, lesion_gt)
    n = lesion_gt.count
    if n == 0:
        return NA
    return int(np.count_nonzero(lung_pred.data & lesion_gt.data)) / n


def _overlap_metrics(pred: BinaryMask, gt: BinaryMask) -> dict:
    hd, asd_ = hd95_asd(pred, gt)
    return {"dsc": dice(pred, gt), "hd95": hd, "asd": asd_, "avd": avd(pred, gt)}


def task_view(labels: LabelVolume, task, taxonomy: Taxonomy) -> LabelVolume:
    """Rewrite a label volume into the alphabet a task evaluates.

    LUNG keeps lung vs. background, BIN keeps lesion vs. rest, MULTICLASS keeps
    one representative raw id per multiclass target plus COM and OAT. Each
    class is written back with its smallest member id, so the view evaluates
    identically to the original.
    """
    task = Task.parse(task)
    taxonomy.check_labels(labels)
    if task is Task.LUNG:
        names = ("LUNG",)
    elif task is Task.BIN:
        names = ("BIN",)
    else:
        names = MULTICLASS_TARGETS + ("COM", "OAT")
    lut = np.zeros(256, dtype=np.uint8)
    for name in names:
        cls = taxonomy[name]
        lut[list(cls.members)] = cls.representative
    return LabelVolume(lut[labels.data], labels.spacing)


def evaluate_case(
    gt: LabelVolume,
    pred: LabelVolume,
    taxonomy: Taxonomy,
    task,
    case_id: str = "",
    method_id: str = "",
) -> list[MetricRecord]:
    """All metric records for one (case, method, task)."""
    task = Task.parse(task)
    gt.check_grid(pred)
    taxonomy.check_labels(gt)
    taxonomy.check_labels(pred)
    base = MetricRecord(case_id, method_id, task, "")

    if task is Task.LUNG:
        lung_gt = taxonomy.project(gt, "LUNG")
        lung_pred = taxonomy.project(pred, "LUNG")
        records = [replace(base, eval_class="LUNG", **_overlap_metrics(lung_pred, lung_gt))]
        for name in MULTICLASS_TARGETS:
            sen = sensitivity(lung_pred, taxonomy.project(gt, name))
            records.append(replace(base, eval_class=name, sen=sen))
        return records

    if task is Task.BIN:
        m = _overlap_metrics(taxonomy.project(pred, "BIN"), taxonomy.project(gt, "BIN"))
        return [replace(base, eval_class="BIN", **m)]

    keep = ~taxonomy.ignore_mask(gt).data
    records = []
    for name in MULTICLASS_TARGETS + ("GGO_PLUS_CPP",):
        p = BinaryMask(taxonomy.project(pred, name).data & keep, gt.spacing)
        g = BinaryMask(taxonomy.project(gt, name).data & keep, gt.spacing)
        records.append(replace(base, eval_class=name, **_overlap_metrics(p, g)))
    targets = records[: len(MULTICLASS_TARGETS)]
    mean = {k: nanmean(r.get(k) for r in targets) for k in ("dsc", "hd95", "asd", "avd")}
    records.insert(len(MULTICLASS_TARGETS), replace(base, eval_class="MEAN", **mean))
    return records
