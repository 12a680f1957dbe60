"""Voxel-grid containers and geometric preprocessing.

Arrays are stored with shape ``(nx, ny, nz)``; the linear voxel index used
for tie-breaking and serialization is x-fastest, i.e. ``x + nx * (y + ny * z)``,
which is numpy's Fortran order for that shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

__all__ = [
    "Spacing",
    "Volume",
    "LabelVolume",
    "BinaryMask",
    "ProbVolume",
    "GridMismatchError",
    "clip_rescale",
    "avg_pool_axis",
    "nn_upsample_axis",
    "keep_k_largest_components",
    "threshold",
    "linear_index",
]

_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}
# float32 rounding of a stored spacing is below 6e-8 relative
SPACING_RTOL = 1e-6


class GridMismatchError(ValueError):
    """Two volumes do not share dims and spacing."""


@dataclass(frozen=True)
class Spacing:
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name in ("sx", "sy", "sz"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"spacing {name} must be > 0, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, s: "Spacing | Sequence[float]") -> "Spacing":
        if isinstance(s, Spacing):
            return s
        sx, sy, sz = s
        return cls(sx, sy, sz)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sx, self.sy, self.sz)

    @property
    def voxel_volume_ml(self) -> float:
        return self.sx * self.sy * self.sz / 1000.0

    def close_to(self, other: "Spacing", rtol: float = SPACING_RTOL) -> bool:
        """Equal up to single precision, the resolution NIfTI stores spacing at."""
        return all(abs(a - b) <= rtol * max(abs(a), abs(b)) for a, b in zip(self.as_tuple(), other.as_tuple()))

    def scaled(self, axis: int, factor: float) -> "Spacing":
        t = list(self.as_tuple())
        t[axis] *= factor
        return Spacing(*t)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar 3D grid with anisotropic spacing (mm)."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {data.shape}")
        object.__setattr__(self, "data", _frozen(self._coerce(data)))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    def _coerce(self, data: np.ndarray) -> np.ndarray:
        return data

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def same_grid(self, other: "Volume | ProbVolume") -> bool:
        return self.dims == other.dims and self.spacing.close_to(other.spacing)

    def check_grid(self, other: "Volume | ProbVolume") -> None:
        if self.dims != other.dims:
            raise GridMismatchError(f"dims differ: {self.dims} vs {other.dims}")
        if not self.spacing.close_to(other.spacing):
            raise GridMismatchError(
                f"spacing differs: {self.spacing.as_tuple()} vs {other.spacing.as_tuple()}"
            )

    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest linear order."""
        return self.data.ravel(order="F")

    def replace(self, data: np.ndarray) -> "Volume":
        return type(self)(data, self.spacing)


class LabelVolume(Volume):
    """Integer labels in [0, 255]."""

    def _coerce(self, data):
        if data.dtype.kind == "f":
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise ValueError("label volume contains non-integer values")
        elif data.dtype.kind not in "iub":
            raise ValueError(f"label volume needs an integer dtype, got {data.dtype}")
        if data.size and (data.min() < 0 or data.max() > 255):
            raise ValueError("labels must lie in [0, 255]")
        return data.astype(np.uint8)


class BinaryMask(Volume):
    def _coerce(self, data):
        return data.astype(bool)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @classmethod
    def full(cls, dims, spacing) -> "BinaryMask":
        return cls(np.ones(dims, dtype=bool), spacing)

    @classmethod
    def empty(cls, dims, spacing) -> "BinaryMask":
        return cls(np.zeros(dims, dtype=bool), spacing)


@dataclass(frozen=True, eq=False)
class ProbVolume:
    """Per-voxel class probabilities, shape ``(nx, ny, nz, C)``."""

    data: np.ndarray
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))
    normalized: bool = False

    NORM_TOL = 1e-5

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4 or data.shape[-1] < 1:
            raise ValueError(f"expected (nx, ny, nz, C) probabilities, got shape {data.shape}")
        if np.any(data < 0) or np.any(data > 1) or not np.all(np.isfinite(data)):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.normalized:
            dev = np.abs(data.sum(axis=-1) - 1.0)
            if dev.size and dev.max() > self.NORM_TOL:
                raise ValueError(f"per-voxel sums deviate from 1 by up to {dev.max():.3g}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", Spacing.of(self.spacing))

    @classmethod
    def from_channels(cls, channels: Sequence[Volume], normalized: bool | None = None) -> "ProbVolume":
        if not channels:
            raise ValueError("need at least one channel")
        first = channels[0]
        for c in channels[1:]:
            first.check_grid(c)
        data = np.stack([np.asarray(c.data, dtype=np.float64) for c in channels], axis=-1)
        if normalized is None:
            normalized = bool(np.all(np.abs(data.sum(-1) - 1.0) <= cls.NORM_TOL))
        return cls(data, first.spacing, normalized)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[:3])

    @property
    def channels(self) -> int:
        return int(self.data.shape[-1])

    def channel(self, c: int) -> Volume:
        return Volume(self.data[..., c], self.spacing)


def linear_index(dims: Sequence[int]) -> np.ndarray:
    """x-fastest linear index of every voxel, shaped like the grid."""
    nx, ny, nz = dims
    return np.arange(nx * ny * nz, dtype=np.int64).reshape((nx, ny, nz), order="F")


def _axis(axis) -> int:
    try:
        return _AXES[axis]
    except KeyError:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}") from None


def clip_rescale(volume: Volume, lo: float, hi: float, out_lo: float = 0.0, out_hi: float = 1.0) -> Volume:
    """Clamp intensities to ``[lo, hi]`` and map that window linearly onto ``[out_lo, out_hi]``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    if not out_lo < out_hi:
        raise ValueError(f"need out_lo < out_hi, got {out_lo}, {out_hi}")
    v = np.clip(np.asarray(volume.data, dtype=np.float64), lo, hi)
    out = out_lo + (v - lo) * ((out_hi - out_lo) / (hi - lo))
    return Volume(np.clip(out, out_lo, out_hi), volume.spacing)


def avg_pool_axis(volume: Volume, axis, factor: int) -> Volume:
    """Average non-overlapping blocks of ``factor`` slices along one axis.

    Trailing slices that do not fill a whole block are dropped.
    """
    ax = _axis(axis)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    n = volume.dims[ax]
    if factor > n:
        raise ValueError(f"factor {factor} exceeds axis length {n}")
    m = n // factor
    data = np.moveaxis(np.asarray(volume.data, dtype=np.float64), ax, 0)[: m * factor]
    pooled = data.reshape((m, factor) + data.shape[1:]).mean(axis=1)
    return Volume(np.moveaxis(pooled, 0, ax), volume.spacing.scaled(ax, factor))


def nn_upsample_axis(volume: Volume, axis, factor: int, target_len: int) -> Volume:
    """Repeat each slice ``factor`` times along an axis, zero-padding up to ``target_len``."""
    ax = _axis(axis)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    n = volume.dims[ax]
    if target_len < n * factor:
        raise ValueError(f"target_len {target_len} < {n} * {factor}")
    up = np.repeat(volume.data, factor, axis=ax)
    pad = [(0, 0)] * 3
    pad[ax] = (0, target_len - n * factor)
    up = np.pad(up, pad, mode="constant", constant_values=0)
    return type(volume)(up, volume.spacing.scaled(ax, 1.0 / factor))


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def keep_k_largest_components(mask: BinaryMask, k: int, connectivity: int = 26) -> BinaryMask:
    """Keep the ``k`` largest connected components of a mask.

    Equal-sized components are ranked by the smallest x-fastest linear
    index they contain.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    labels, n = ndimage.label(mask.data, structure=_STRUCTURES[connectivity])
    if n <= k:
        return BinaryMask(mask.data, mask.spacing)
    ids = np.arange(1, n + 1)
    sizes = ndimage.sum_labels(np.ones(mask.dims), labels, ids)
    seeds = ndimage.minimum(linear_index(mask.dims), labels, ids)
    order = np.lexsort((seeds, -sizes))
    keep = ids[order[:k]]
    return BinaryMask(np.isin(labels, keep), mask.spacing)


def threshold(prob: Volume, t: float = 0.5) -> BinaryMask:
    """Foreground where ``p >= t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return BinaryMask(np.asarray(prob.data) >= t, prob.spacing)
