"""Fusion of several predictions: majority voting and probability averaging."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import uniform
from .volume import LabelVolume, ProbVolume, linear_index

__all__ = ["VoteConfig", "majority_vote", "average_probs", "argmax_labels"]


@dataclass(frozen=True)
class VoteConfig:
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("vote seed must be an unsigned 64-bit integer")


def _same_grid(volumes) -> None:
    if not volumes:
        raise ValueError("need at least one prediction")
    first = volumes[0]
    for v in volumes[1:]:
        first.check_grid(v)


def majority_vote(preds: Sequence[LabelVolume], cfg: VoteConfig = VoteConfig()) -> LabelVolume:
    """Per-voxel most frequent label; ties drawn uniformly among the tied labels.

    The tie draw at a voxel depends only on ``cfg.seed`` and the voxel's
    x-fastest linear index, never on the order of ``preds``.
    """
    preds = list(preds)
    _same_grid(preds)
    stack = np.stack([np.asarray(p.data) for p in preds])
    labels = np.unique(stack)
    counts = np.stack([(stack == lab).sum(axis=0, dtype=np.int32) for lab in labels])
    best = counts.max(axis=0)
    tied = counts == best
    n_tied = tied.sum(axis=0)
    # first maximal label in ascending order; replaced below where there is a tie
    choice = tied.argmax(axis=0)
    tie = n_tied > 1
    if tie.any():
        u = uniform(cfg.seed, linear_index(preds[0].dims)[tie])
        pick = np.minimum((u * n_tied[tie]).astype(np.int64), n_tied[tie] - 1)
        rank = np.cumsum(tied[:, tie], axis=0) - 1
        hit = tied[:, tie] & (rank == pick[None, :])
        choice[tie] = hit.argmax(axis=0)
    return LabelVolume(labels[choice], preds[0].spacing)


def average_probs(preds: Sequence[ProbVolume]) -> ProbVolume:
    """Voxel- and channel-wise arithmetic mean of probability maps."""
    preds = list(preds)
    if not preds:
        raise ValueError("need at least one prediction")
    first = preds[0]
    for p in preds[1:]:
        if p.dims != first.dims or not p.spacing.close_to(first.spacing):
            raise ValueError("probability maps live on different grids")
        if p.channels != first.channels:
            raise ValueError(f"channel counts differ: {first.channels} vs {p.channels}")
    total = np.zeros_like(first.data)
    for p in preds:
        total += p.data
    mean = total / len(preds)
    normalized = all(p.normalized for p in preds)
    return ProbVolume(mean, first.spacing, normalized)


def argmax_labels(prob: ProbVolume, class_ids: Sequence[int]) -> LabelVolume:
    """Label of the most probable channel; ties go to the lowest channel index."""
    class_ids = np.asarray(list(class_ids))
    if class_ids.size != prob.channels:
        raise ValueError(f"{class_ids.size} class ids for {prob.channels} channels")
    return LabelVolume(class_ids[np.argmax(prob.data, axis=-1)], prob.spacing)
