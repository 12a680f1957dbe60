"""Raw lesion labels, evaluation classes and the ignore rule."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .volume import BinaryMask, LabelVolume

__all__ = [
    "RAW_NAMES",
    "DEFAULT_RAW_IDS",
    "EvalClass",
    "Taxonomy",
    "UnknownLabelError",
    "MULTICLASS_TARGETS",
]

RAW_NAMES = (
    "BACKGROUND",
    "HEALTHY_LUNG",
    "GGO",
    "CONSOLIDATION",
    "CPP",
    "LINEAR_OPACITY",
    "RHS",
    "COMBINED",
    "OAT",
)
DEFAULT_RAW_IDS = {name: i for i, name in enumerate(RAW_NAMES)}

_LESIONS = ("GGO", "CONSOLIDATION", "CPP", "LINEAR_OPACITY", "RHS", "COMBINED", "OAT")
_GROUPS = {
    "CON": ("CONSOLIDATION", "LINEAR_OPACITY"),
    "CPP": ("CPP",),
    "GGO": ("GGO",),
    "COM": ("COMBINED", "RHS"),
    "OAT": ("OAT",),
    "BIN": _LESIONS,
    "GGO_PLUS_CPP": ("GGO", "CPP"),
    "LUNG": ("HEALTHY_LUNG",) + _LESIONS,
    "MEAN": (),
}
MULTICLASS_TARGETS = ("CON", "CPP", "GGO")


class UnknownLabelError(ValueError):
    pass


@dataclass(frozen=True)
class EvalClass:
    name: str
    members: frozenset

    @property
    def representative(self) -> int:
        """Smallest member id; used to write a class back into a label volume."""
        return min(self.members)


@dataclass(frozen=True)
class Taxonomy:
    raw: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_RAW_IDS))
    ignore: frozenset = frozenset({"COM"})

    def __post_init__(self):
        raw = dict(self.raw)
        missing = set(RAW_NAMES) - set(raw)
        extra = set(raw) - set(RAW_NAMES)
        if missing or extra:
            raise ValueError(f"taxonomy raw names mismatch: missing {sorted(missing)}, unknown {sorted(extra)}")
        if raw["BACKGROUND"] != 0:
            raise ValueError("BACKGROUND must have id 0")
        ids = list(raw.values())
        if len(set(ids)) != len(ids):
            raise ValueError("raw class ids must be unique")
        if any(not 0 <= i <= 255 for i in ids):
            raise ValueError("raw class ids must lie in [0, 255]")
        ignore = frozenset(self.ignore)
        unknown = ignore - set(_GROUPS)
        if unknown:
            raise ValueError(f"ignore set names unknown classes {sorted(unknown)}")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "ignore", ignore)
        classes = {
            name: EvalClass(name, frozenset(raw[m] for m in members))
            for name, members in _GROUPS.items()
        }
        object.__setattr__(self, "_classes", classes)
        lut = np.full(256, -1, dtype=np.int16)
        for i in ids:
            lut[i] = i
        object.__setattr__(self, "_known", lut >= 0)

    @classmethod
    def from_json(cls, path) -> "Taxonomy":
        spec = json.loads(Path(path).read_text())
        raw = dict(DEFAULT_RAW_IDS)
        raw.update({k: int(v) for k, v in spec.get("raw", {}).items()})
        return cls(raw, frozenset(spec.get("ignore", ["COM"])))

    def to_json(self) -> dict:
        return {"raw": dict(self.raw), "ignore": sorted(self.ignore)}

    def __getitem__(self, name: str) -> EvalClass:
        try:
            return self._classes[name]
        except KeyError:
            raise KeyError(f"unknown evaluation class {name!r}") from None

    @property
    def classes(self) -> dict:
        return dict(self._classes)

    def check_labels(self, labels: LabelVolume) -> None:
        present = np.unique(labels.data)
        bad = present[~self._known[present]]
        if bad.size:
            raise UnknownLabelError(f"labels not in taxonomy: {bad.tolist()}")

    def project(self, labels: LabelVolume, cls: "EvalClass | str") -> BinaryMask:
        """Mask of voxels whose raw label belongs to ``cls``."""
        if isinstance(cls, str):
            cls = self[cls]
        self.check_labels(labels)
        lut = np.zeros(256, dtype=bool)
        lut[list(cls.members)] = True
        return BinaryMask(lut[labels.data], labels.spacing)

    def ignore_mask(self, gt: LabelVolume) -> BinaryMask:
        """Voxels excluded from multiclass metrics (ground truth in the ignore set)."""
        members = set()
        for name in self.ignore:
            members |= self[name].members
        lut = np.zeros(256, dtype=bool)
        lut[list(members)] = True
        return BinaryMask(lut[gt.data], gt.spacing)
