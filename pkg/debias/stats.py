"""
Significance testing
Pooled-shift bootstrap test of a mean difference, Mann-Whitney U test and
Bonferroni correction
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.stats import norm, rankdata

from debias.errors import StatisticsError
from debias.seeding import seeded_rng

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
TIE_TOLERANCE = 1e-12
EXACT_LIMIT = 12
BOOTSTRAP_CHUNK = 2500
MIN_BOOTSTRAP_ITERATIONS = 1000


@dataclass(frozen=True)
class SampleSet:
    """Two groups of accuracies, e.g. one per seed"""

    a: Tuple[float, ...]
    b: Tuple[float, ...]
    labels: Tuple[str, str] = ("a", "b")

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        if not self.a or not self.b:
            raise StatisticsError("both groups need at least one value")
        for x in self.a + self.b:
            if not 0.0 <= x <= 1.0:
                raise StatisticsError(f"accuracies must lie in [0, 1], got {x}")

    @classmethod
    def from_reports(cls, reports_a, reports_b, labels=("a", "b")) -> "SampleSet":
        """Max relearned accuracy of each probe report"""
        return cls([r.max_accuracy for r in reports_a], [r.max_accuracy for r in reports_b], labels)


@dataclass(frozen=True)
class TestResult:
    kind: str
    p_value: float
    corrected_p: float
    factor: int
    statistic: float

    @property
    def significant(self) -> bool:
        return self.corrected_p < SIGNIFICANCE_LEVEL

    def to_dict(self):
        return {
            "kind": self.kind,
            "p_value": self.p_value,
            "corrected_p": self.corrected_p,
            "factor": self.factor,
            "statistic": self.statistic,
        }


def bonferroni(raw_p: float, m: int) -> float:
    """min(1, raw_p × m)"""
    if not 0.0 <= raw_p <= 1.0:
        raise StatisticsError(f"p-value must lie in [0, 1], got {raw_p}")
    if int(m) != m or m < 1:
        raise StatisticsError(f"correction factor must be a positive integer, got {m}")
    return min(1.0, raw_p * m)


def _groups(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise StatisticsError("both groups need at least one value")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StatisticsError("samples must be finite")
    return a, b


def bootstrap_test(
    a: Sequence[float],
    b: Sequence[float],
    iterations: int = 10000,
    seed: int = 0,
    alternative: str = "greater",
    correction: int = 1,
) -> TestResult:
    """
    One-sided bootstrap test of mean(a) − mean(b)

    Both groups are shifted onto the pooled mean so the null holds, then
    resampled with replacement. The p-value is the fraction of resampled
    differences at least as extreme as the observed one, ties included.

    Args:
        a, b: samples
        iterations: resamples, at least 1000
        seed: resampling seed; iterations are split into fixed-size
            chunks, each with its own stream
        alternative: "greater" tests mean(a) > mean(b), "less" the reverse
        correction: Bonferroni factor applied to the reported corrected_p

    Returns:
        TestResult with the observed difference as statistic
    """
    a, b = _groups(a, b)
    if iterations < MIN_BOOTSTRAP_ITERATIONS:
        raise StatisticsError(f"need at least {MIN_BOOTSTRAP_ITERATIONS} iterations, got {iterations}")
    if alternative not in ("greater", "less"):
        raise StatisticsError(f"alternative must be 'greater' or 'less', got {alternative!r}")

    observed = a.mean() - b.mean()
    pooled = np.concatenate([a, b]).mean()
    a0 = a - a.mean() + pooled
    b0 = b - b.mean() + pooled

    extreme = 0
    for chunk, start in enumerate(range(0, iterations, BOOTSTRAP_CHUNK)):
        size = min(BOOTSTRAP_CHUNK, iterations - start)
        rng = seeded_rng(seed, "bootstrap", chunk)
        diffs = a0[rng.integers(0, a.size, (size, a.size))].mean(axis=1) - b0[
            rng.integers(0, b.size, (size, b.size))
        ].mean(axis=1)
        if alternative == "greater":
            extreme += int(np.count_nonzero(diffs >= observed - TIE_TOLERANCE))
        else:
            extreme += int(np.count_nonzero(diffs <= observed + TIE_TOLERANCE))

    p = extreme / iterations
    return TestResult("bootstrap", p, bonferroni(p, correction), int(correction), float(observed))


def _u_statistic(ranks: np.ndarray, n_a: int) -> float:
    return float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)


def _exact_p(ranks: np.ndarray, n_a: int, observed_u: float) -> float:
    """Two-sided p by enumerating every assignment of ranks to group a"""
    centre = n_a * (ranks.size - n_a) / 2.0
    threshold = abs(observed_u - centre) - 1e-9
    offset = n_a * (n_a + 1) / 2.0
    extreme = total = 0
    for positions in itertools.combinations(range(ranks.size), n_a):
        u = ranks[list(positions)].sum() - offset
        total += 1
        if abs(u - centre) >= threshold:
            extreme += 1
    return extreme / total


def _normal_p(ranks: np.ndarray, n_a: int, n_b: int, observed_u: float) -> float:
    n = n_a + n_b
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts)) / (n * (n - 1))
    variance = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:
        return 1.0
    z = max(abs(observed_u - n_a * n_b / 2.0) - 0.5, 0.0) / math.sqrt(variance)
    return float(min(1.0, 2.0 * norm.sf(z)))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], correction: int = 1) -> TestResult:
    """
    Two-sided Mann-Whitney U test with midranks

    U counts the pairs where the a value exceeds the b value, ties counting
    one half. With at most EXACT_LIMIT values in total the p-value is exact;
    otherwise a tie-corrected normal approximation with continuity
    correction is used.
    """
    a, b = _groups(a, b)
    ranks = rankdata(np.concatenate([a, b]), method="average")
    u = _u_statistic(ranks, a.size)
    if a.size + b.size <= EXACT_LIMIT:
        p = _exact_p(ranks, a.size, u)
    else:
        p = _normal_p(ranks, a.size, b.size, u)
    return TestResult("mann_whitney", p, bonferroni(p, correction), int(correction), u)


@dataclass(frozen=True)
class ComparisonRow:
    """One significance row: group summaries plus both tests"""

    label: str
    mann_whitney: TestResult
    bootstrap: TestResult
    means: Tuple[float, float]
    medians: Tuple[float, float]
    groups: Tuple[str, str] = ("a", "b")

    @property
    def significant(self) -> bool:
        return self.mann_whitney.significant

    @property
    def smaller_mean(self) -> bool:
        """Group b's mean is significantly below group a's"""
        return self.bootstrap.significant

    def to_dict(self) -> Dict:
        first, second = self.groups
        return {
            "label": self.label,
            "mw_p": self.mann_whitney.corrected_p,
            "b_p": self.bootstrap.corrected_p,
            f"mean_{first}": self.means[0],
            f"median_{first}": self.medians[0],
            f"mean_{second}": self.means[1],
            f"median_{second}": self.medians[1],
            "significant": self.significant,
            "smaller_mean": self.smaller_mean,
        }


def compare_groups(
    samples: SampleSet,
    label: str = "",
    factor: int = 1,
    iterations: int = 10000,
    seed: int = 0,
) -> ComparisonRow:
    """Both tests, Bonferroni-corrected by factor, plus mean and median per group"""
    a, b = np.array(samples.a), np.array(samples.b)
    row = ComparisonRow(
        label=label,
        mann_whitney=mann_whitney_u(a, b, correction=factor),
        bootstrap=bootstrap_test(a, b, iterations=iterations, seed=seed, correction=factor),
        means=(float(a.mean()), float(b.mean())),
        medians=(float(np.median(a)), float(np.median(b))),
        groups=samples.labels,
    )
    logger.debug(f"Comparison {label}: {row.to_dict()}")
    return row
