"""Paired bootstrap superiority tests and percentile confidence intervals."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .metrics import NA, nanmean

__all__ = [
    "Direction",
    "PairedScores",
    "TestResult",
    "MethodSummary",
    "METRIC_DIRECTION",
    "bootstrap_superiority",
    "bootstrap_ci",
    "summarize",
]

ALPHA = 0.05
DEFAULT_RESAMPLES = 10_000
# resamples are drawn in fixed-size blocks, each from its own substream
_BLOCK = 1000


class Direction(str, Enum):
    HIGHER_BETTER = "higher"
    LOWER_BETTER = "lower"


METRIC_DIRECTION = {
    "dsc": Direction.HIGHER_BETTER,
    "sen": Direction.HIGHER_BETTER,
    "hd95": Direction.LOWER_BETTER,
    "asd": Direction.LOWER_BETTER,
    "avd": Direction.LOWER_BETTER,
}


@dataclass(frozen=True)
class PairedScores:
    """Per-case scores of two methods; cases NA in either are dropped."""

    case_ids: tuple
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    @classmethod
    def from_values(cls, case_ids, a, b) -> "PairedScores":
        case_ids, a, b = list(case_ids), list(a), list(b)
        if not len(case_ids) == len(a) == len(b):
            raise ValueError("case ids and both score lists must have equal length")
        keep = [i for i in range(len(a)) if a[i] is not NA and b[i] is not NA
                and np.isfinite(a[i]) and np.isfinite(b[i])]
        return cls(
            tuple(case_ids[i] for i in keep),
            np.array([a[i] for i in keep], dtype=np.float64),
            np.array([b[i] for i in keep], dtype=np.float64),
        )

    def __len__(self):
        return len(self.case_ids)


@dataclass(frozen=True)
class TestResult:
    observed_mean_diff: float
    p_value: float
    n_resamples: int
    seed: int

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA


def _resample_means(values: np.ndarray, n: int, seed: int) -> np.ndarray:
    m = values.size
    ss = np.random.SeedSequence(int(seed))
    out = np.empty(n, dtype=np.float64)
    for block, start in enumerate(range(0, n, _BLOCK)):
        stop = min(start + _BLOCK, n)
        sub = np.random.SeedSequence(ss.entropy, spawn_key=(block,))
        rng = np.random.Generator(np.random.Philox(sub))
        idx = rng.integers(0, m, size=(stop - start, m))
        out[start:stop] = values[idx].mean(axis=1)
    return out


def bootstrap_superiority(
    ps: PairedScores,
    n: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    direction: Direction = Direction.HIGHER_BETTER,
) -> TestResult:
    """One-sided paired bootstrap test of "A is better than B".

    Differences are oriented so positive favours A, resampled at case level,
    and ``p = (1 + #{resample means <= 0}) / (n + 1)``.
    """
    if n < 1000:
        raise ValueError("use at least 1000 resamples")
    if len(ps) == 0:
        raise ValueError("no cases left after removing NA pairs")
    direction = Direction(direction)
    d = ps.a - ps.b if direction is Direction.HIGHER_BETTER else ps.b - ps.a
    means = _resample_means(d, n, seed)
    p = (1 + int(np.count_nonzero(means <= 0))) / (n + 1)
    return TestResult(float(d.mean()), p, int(n), int(seed))


def bootstrap_ci(scores, n: int = DEFAULT_RESAMPLES, seed: int = 0, level: float = 0.95):
    """Percentile bootstrap interval for the mean."""
    values = np.array([s for s in scores if s is not NA], dtype=np.float64)
    if values.size == 0:
        raise ValueError("no values to bootstrap")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    means = _resample_means(values, n, seed)
    tail = (1 - level) / 2
    lo, hi = np.percentile(means, [100 * tail, 100 * (1 - tail)])
    # a resampled mean can never leave the data range; clamping removes the
    # rounding drift that would otherwise turn a constant c into c - ulp
    lo = min(max(lo, values.min()), values.max())
    hi = min(max(hi, values.min()), values.max())
    return float(lo), float(hi)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    metric: str
    mean: float | None
    n: int
    ci_lo: float | None
    ci_hi: float | None
    superior_to_all: bool
    p_values: Mapping[str, float]


def summarize(
    scores: Mapping[str, Mapping[str, float | None]],
    metric: str,
    n: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    level: float = 0.95,
) -> list[MethodSummary]:
    """Mean, CI and pairwise superiority for each method on one metric.

    ``scores`` maps method -> {case_id -> value or NA}. A method is marked
    superior when its test against every other method is significant.
    """
    direction = METRIC_DIRECTION[metric]
    methods = list(scores)
    out = []
    for m in methods:
        vals = scores[m]
        mean = nanmean(vals.values())
        applicable = [v for v in vals.values() if v is not NA]
        ci = bootstrap_ci(applicable, n, seed, level) if applicable else (NA, NA)
        pvals = {}
        for other in methods:
            if other == m:
                continue
            cases = sorted(set(vals) | set(scores[other]))
            ps = PairedScores.from_values(
                cases, [vals.get(c, NA) for c in cases], [scores[other].get(c, NA) for c in cases]
            )
            if len(ps):
                pvals[other] = bootstrap_superiority(ps, n, seed, direction).p_value
        superior = len(methods) > 1 and len(pvals) == len(methods) - 1 and all(
            p < ALPHA for p in pvals.values()
        )
        out.append(MethodSummary(m, metric, mean, len(applicable), ci[0], ci[1], superior, pvals))
    return out
