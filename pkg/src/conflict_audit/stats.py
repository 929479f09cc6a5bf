"""Statistical kernel: binomial intervals, proportion tests, effect sizes, resampling.

Every other module routes its inference through here so that a p-value or an
interval printed in two tables always comes from the same code path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as _sps

# Relative tolerance when comparing hypergeometric probabilities to the observed
# table's probability; the same guard R's fisher.test uses.
_FISHER_RTOL = 1e-7
_PERM_ATOL = 1e-12


@dataclass(frozen=True)
class RateEstimate:
    successes: int
    trials: int
    rate: float
    ci_low: float
    ci_high: float
    method: str
    level: float = 0.95

    @property
    def pct(self) -> float:
        return 100.0 * self.rate


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    sides: str = "two_tailed"
    n_resamples: int | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    __test__ = False  # keep pytest from collecting this as a test class


def _z_for(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return float(_sps.norm.ppf(1.0 - (1.0 - level) / 2.0))


def _check_counts(k: int, n: int) -> None:
    if n <= 0:
        raise ValueError("trials must be >= 1")
    if not 0 <= k <= n:
        raise ValueError(f"successes must lie in [0, {n}], got {k}")


def wilson_interval(k: int, n: int, level: float = 0.95) -> RateEstimate:
    """Wilson score interval for a binomial proportion."""
    _check_counts(k, n)
    z = _z_for(level)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    low = 0.0 if k == 0 else max(0.0, center - margin)
    high = 1.0 if k == n else min(1.0, center + margin)
    return RateEstimate(k, n, p, min(low, p), max(high, p), "wilson", level)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> RateEstimate:
    """Exact (Beta-quantile) binomial interval."""
    _check_counts(k, n)
    alpha = 1.0 - level
    low = 0.0 if k == 0 else float(_sps.beta.ppf(alpha / 2, k, n - k + 1))
    high = 1.0 if k == n else float(_sps.beta.ppf(1 - alpha / 2, k + 1, n - k))
    p = k / n
    return RateEstimate(k, n, p, min(low, p), max(high, p), "clopper_pearson", level)


def two_prop_z(k1: int, n1: int, k2: int, n2: int) -> TestResult:
    """Two-sided two-proportion z-test with pooled variance.

    The statistic is signed as group 1 minus group 2. When the pooled
    proportion is 0 or 1 there is no variance to test against and the
    result is z = 0, p = 1.
    """
    _check_counts(k1, n1)
    _check_counts(k2, n2)
    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return TestResult(0.0, 1.0, "two_prop_z", flags=("degenerate_pooled",))
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (k1 / n1 - k2 / n2) / se
    p = float(2.0 * _sps.norm.sf(abs(z)))
    return TestResult(float(z), min(1.0, p), "two_prop_z")


def _as_table(table) -> np.ndarray:
    t = np.asarray(table, dtype=np.int64)
    if t.shape != (2, 2):
        raise ValueError("expected a 2x2 table")
    if (t < 0).any():
        raise ValueError("counts must be nonnegative")
    if t.sum() <= 0:
        raise ValueError("table total must be positive")
    return t


def expected_counts(table) -> np.ndarray:
    t = _as_table(table)
    rows = t.sum(axis=1, keepdims=True)
    cols = t.sum(axis=0, keepdims=True)
    return rows * cols / t.sum()


def fisher_exact(table) -> TestResult:
    """Two-sided Fisher exact test: sum of hypergeometric probabilities that do
    not exceed the observed table's probability."""
    t = _as_table(table)
    (a, b), (c, d) = t
    row1, col1, total = a + b, a + c, int(t.sum())
    if min(row1, c + d, col1, b + d) == 0:
        return TestResult(float("nan"), 1.0, "fisher_exact", flags=("degenerate_margin",))
    lo, hi = max(0, col1 - (c + d)), min(row1, col1)
    support = np.arange(lo, hi + 1)
    pmf = _sps.hypergeom.pmf(support, total, col1, row1)
    p_obs = pmf[a - lo]
    p = float(pmf[pmf <= p_obs * (1 + _FISHER_RTOL)].sum())
    odds = (a * d) / (b * c) if b * c else float("inf")
    return TestResult(float(odds), min(1.0, p), "fisher_exact")


def chi_square(table) -> TestResult:
    """Pearson chi-square on a 2x2 table, no continuity correction."""
    t = _as_table(table)
    e = expected_counts(t)
    if (e == 0).any():
        return TestResult(float("nan"), 1.0, "chi_square", flags=("degenerate_margin",))
    stat = float(((t - e) ** 2 / e).sum())
    return TestResult(stat, float(_sps.chi2.sf(stat, 1)), "chi_square")


def chi_or_fisher(table) -> TestResult:
    """Chi-square when every expected cell is >= 5, Fisher exact otherwise."""
    t = _as_table(table)
    if (t.sum(axis=0) == 0).any() or (t.sum(axis=1) == 0).any():
        return TestResult(float("nan"), 1.0, "fisher_exact", flags=("degenerate_margin",))
    if (expected_counts(t) < 5).any():
        return fisher_exact(t)
    return chi_square(t)


def cohen_h(p1: float, p2: float) -> float:
    """Arcsine-transform effect size for two proportions."""
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"proportion out of range: {p}")
    return 2.0 * (math.asin(math.sqrt(p1)) - math.asin(math.sqrt(p2)))


def permutation_test(
    a: Sequence[float],
    b: Sequence[float],
    n_perm: int = 1000,
    seed: int = 0,
) -> TestResult:
    """Two-tailed permutation test on the difference in means (a - b).

    If the number of distinct group splits is at most ``n_perm`` every split is
    enumerated and the exact p-value is returned. Otherwise ``n_perm`` random
    relabelings are drawn and p = (1 + #{|T*| >= |T|}) / (n_perm + 1).
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("both groups must be non-empty")
    pooled = np.concatenate([x, y])
    n, na = pooled.size, x.size
    observed = x.mean() - y.mean()
    threshold = abs(observed) - _PERM_ATOL
    total_sum = pooled.sum()

    n_splits = math.comb(n, na)
    if n_splits <= n_perm:
        count = 0
        for idx in itertools.combinations(range(n), na):
            sa = pooled[list(idx)].sum()
            stat = sa / na - (total_sum - sa) / (n - na)
            count += abs(stat) >= threshold
        return TestResult(float(observed), count / n_splits, "permutation",
                          n_resamples=n_splits, flags=("exact",))

    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(pooled, (n_perm, 1)), axis=1)
    sa = perms[:, :na].sum(axis=1)
    stats_ = sa / na - (total_sum - sa) / (n - na)
    count = int((np.abs(stats_) >= threshold).sum())
    return TestResult(float(observed), (1 + count) / (n_perm + 1), "permutation",
                      n_resamples=n_perm)


def bootstrap_ci(
    data,
    statistic: Callable[..., float] = np.mean,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval.

    ``data`` is one sample or a tuple of samples; samples in a tuple are
    resampled independently and passed to ``statistic`` positionally. When the
    number of distinct resamples is no larger than ``n_boot`` they are
    enumerated exhaustively instead of drawn at random.
    """
    samples = [np.asarray(s, dtype=float) for s in data] if isinstance(data, tuple) \
        else [np.asarray(data, dtype=float)]
    sizes = [s.size for s in samples]
    if any(sz == 0 for sz in sizes) or sum(sizes) < 2:
        raise ValueError("bootstrap needs at least 2 observations and no empty sample")

    n_distinct = math.prod(sz ** sz for sz in sizes)
    values: list[float] = []
    if n_distinct <= n_boot:
        per_sample = [itertools.product(range(sz), repeat=sz) for sz in sizes]
        for combo in itertools.product(*[list(p) for p in per_sample]):
            values.append(float(statistic(*[s[list(i)] for s, i in zip(samples, combo)])))
    else:
        rng = np.random.default_rng(seed)
        idx = [rng.integers(0, sz, size=(n_boot, sz)) for sz in sizes]
        for r in range(n_boot):
            values.append(float(statistic(*[s[i[r]] for s, i in zip(samples, idx)])))

    alpha = 1.0 - level
    low, high = np.quantile(np.asarray(values), [alpha / 2, 1 - alpha / 2])
    return float(low), float(high)


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman rank correlation with average ranks for ties.

    Returns None when either ranking has zero variance.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.size != ya.size:
        raise ValueError("x and y must have equal length")
    if xa.size < 2:
        raise ValueError("need at least 2 points")
    rx, ry = _sps.rankdata(xa), _sps.rankdata(ya)
    if rx.std() == 0 or ry.std() == 0:
        return None
    rho = float(np.corrcoef(rx, ry)[0, 1])
    return max(-1.0, min(1.0, rho))


def normalized_entropy(counts: Mapping[str, int] | Sequence[int]) -> float:
    """Shannon entropy of the empirical label distribution divided by ln 6."""
    vals = np.asarray(list(counts.values()) if isinstance(counts, Mapping) else list(counts),
                      dtype=float)
    total = vals.sum()
    if total < 1:
        raise ValueError("need at least one observation")
    p = vals[vals > 0] / total
    h = float(-(p * np.log(p)).sum())
    return max(0.0, min(1.0, h / math.log(6)))
