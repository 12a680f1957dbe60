"""Generalized Wasserstein Dice score and loss with an inter-class ground distance.

For a one-hot reference the Wasserstein distance at voxel ``i`` reduces to
``W_i = sum_l' M[g_i, l'] * p[i, l']``. With class weights
``alpha_l = 1 / (1 + n_l)`` (``n_l`` = reference voxels of class ``l``)::

    score = 2 * sum_i alpha[g_i] * (1 - W_i) / sum_i alpha[g_i] * (2 - W_i)
    loss  = 1 - score
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "GWDL_CLASSES",
    "DistanceMatrix",
    "default_matrix",
    "wasserstein_pointwise",
    "alpha_weights",
    "gwdl_score",
    "gwdl_loss_and_grad",
    "raw_to_gwdl_index",
]

GWDL_CLASSES = ("background", "GGO", "CON", "CPP", "COM", "OAT", "healthy lung")

_DEFAULT_M = (
    (0, 1, 1, 1, 1, 0, 1),
    (1, 0, 0.8, 0.8, 0, 0, 1),
    (1, 0.8, 0, 0.8, 0, 0, 1),
    (1, 0.8, 0.8, 0, 0, 0, 1),
    (1, 0, 0, 0, 0, 0, 1),
    (0, 0, 0, 0, 0, 0, 1),
    (1, 1, 1, 1, 1, 1, 0),
)

NORM_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric, zero-diagonal class distances in [0, 1].

    The triangle inequality is deliberately not required.
    """

    m: np.ndarray
    class_names: tuple

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        names = tuple(self.class_names)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"distance matrix must be square, got {m.shape}")
        if len(names) != m.shape[0]:
            raise ValueError(f"{len(names)} class names for a {m.shape[0]}x{m.shape[0]} matrix")
        if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
            raise ValueError("distances must lie in [0, 1]")
        if not np.array_equal(m, m.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(m) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "class_names", names)

    @property
    def L(self) -> int:
        return self.m.shape[0]

    def index(self, name: str) -> int:
        return self.class_names.index(name)

    @classmethod
    def from_json(cls, path) -> "DistanceMatrix":
        spec = json.loads(Path(path).read_text())
        return cls(np.asarray(spec["m"], dtype=np.float64), tuple(spec["classes"]))

    def to_json(self) -> dict:
        return {"classes": list(self.class_names), "m": self.m.tolist()}


def default_matrix() -> DistanceMatrix:
    return DistanceMatrix(np.asarray(_DEFAULT_M, dtype=np.float64), GWDL_CLASSES)


def raw_to_gwdl_index(taxonomy) -> np.ndarray:
    """Lookup table from raw label ids to rows of the default matrix."""
    groups = {
        "background": ("BACKGROUND",),
        "GGO": ("GGO",),
        "CON": ("CONSOLIDATION", "LINEAR_OPACITY"),
        "CPP": ("CPP",),
        "COM": ("COMBINED", "RHS"),
        "OAT": ("OAT",),
        "healthy lung": ("HEALTHY_LUNG",),
    }
    lut = np.full(256, -1, dtype=np.int64)
    for idx, name in enumerate(GWDL_CLASSES):
        for raw in groups[name]:
            lut[taxonomy.raw[raw]] = idx
    return lut


def _check_probs(p: np.ndarray) -> np.ndarray:
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    s = p.sum(axis=-1, keepdims=True)
    dev = np.abs(s - 1.0)
    if dev.size and dev.max() > NORM_TOL:
        raise ValueError(f"probabilities sum to 1 only within {dev.max():.3g} (tolerance {NORM_TOL})")
    return p / s


def wasserstein_pointwise(p: Sequence[float], gt_class: int, M: DistanceMatrix) -> float:
    p = _check_probs(np.asarray(p, dtype=np.float64))
    if p.shape != (M.L,):
        raise ValueError(f"expected {M.L} probabilities, got shape {p.shape}")
    return float(np.dot(M.m[gt_class], p))


def alpha_weights(gt: np.ndarray, L: int) -> np.ndarray:
    """``1 / (1 + count)`` per class; absent classes weigh 1."""
    gt = np.asarray(gt).ravel()
    counts = np.bincount(gt, minlength=L)[:L]
    return 1.0 / (1.0 + counts)


def _flatten(pred, gt, M: DistanceMatrix):
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "data", gt)).astype(np.int64)
    if p.shape[-1] != M.L:
        raise ValueError(f"prediction has {p.shape[-1]} channels, matrix has {M.L}")
    if p.shape[:-1] != g.shape:
        raise ValueError(f"grid mismatch: {p.shape[:-1]} vs {g.shape}")
    if g.size == 0:
        raise ValueError("empty ground truth")
    if g.min() < 0 or g.max() >= M.L:
        raise ValueError("ground-truth class index out of range")
    shape = p.shape
    p = _check_probs(p.reshape(-1, M.L))
    return p, g.ravel(), shape


def _terms(p, g, M):
    w = np.einsum("ij,ij->i", M.m[g], p)
    a = alpha_weights(g, M.L)[g]
    # contiguous float64 reductions use numpy's fixed pairwise summation
    num = 2.0 * np.sum(a * (1.0 - w))
    den = np.sum(a * (2.0 - w))
    return a, num, den


def gwdl_score(pred, gt, M: DistanceMatrix | None = None) -> float:
    """Dice-style score in [0, 1]; 1 for a perfect prediction.

    ``pred`` is ``(..., L)`` probabilities (or a ProbVolume) and ``gt`` the
    matching array of class indices.
    """
    M = M or default_matrix()
    p, g, _ = _flatten(pred, gt, M)
    _, num, den = _terms(p, g, M)
    return float(num / den)


def gwdl_loss_and_grad(pred, gt, M: DistanceMatrix | None = None):
    """``1 - score`` and its gradient with respect to every probability."""
    M = M or default_matrix()
    p, g, shape = _flatten(pred, gt, M)
    a, num, den = _terms(p, g, M)
    # d num / d p_il = -2 a_i m[g_i, l];  d den / d p_il = -a_i m[g_i, l]
    coef = (num - 2.0 * den) / (den * den)
    grad = -(coef * a[:, None] * M.m[g])
    return float(1.0 - num / den), grad.reshape(shape)
