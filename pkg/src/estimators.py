"""
Statistical estimators and tests used by the verification suites
"""

import logging
import math
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import (
    BOOTSTRAP_RESAMPLES,
    MIN_BIN_COUNT,
    MIN_EFFECTIVE_SAMPLES,
    MIN_GOF_SAMPLES,
    MIN_TAIL_SAMPLES,
    TAIL_INDEX_BAND,
    TAIL_WINDOW,
)
from models import EmpiricalLaplace, TailFit, TestReport
import rng as rngs

logger = logging.getLogger('treewalk')


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def bootstrap_indexes(n: int, n_resamples: int, rng: np.random.Generator, chunk: int = 64) -> Iterator[np.ndarray]:
    """Blocks of resample index rows, at most `chunk` rows at a time"""
    done = 0
    while done < n_resamples:
        rows = min(chunk, n_resamples - done)
        yield rng.integers(0, n, size=(rows, n))
        done += rows


def bootstrap_means(values: np.ndarray, n_resamples: int, rng: np.random.Generator) -> np.ndarray:
    """Resampled column means of values (n, m) -> (n_resamples, m)"""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    out = []
    for idx in bootstrap_indexes(len(values), n_resamples, rng):
        out.append(values[idx].mean(axis=1))
    return np.concatenate(out, axis=0)


def empirical_laplace(
    samples: Sequence[float],
    lambda_grid: Sequence[float],
    conditioning: str = "none",
    rng: Optional[np.random.Generator] = None,
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    alpha: float = 0.05,
) -> EmpiricalLaplace:
    """
    Plug-in estimate of E[exp(-lambda X)] with percentile bootstrap bands

    Args:
        samples: Draws of X
        lambda_grid: Points at which to evaluate the transform
        conditioning: "none", or "positive" to keep only X > 0
        rng: Generator for the resampling
        n_resamples: Bootstrap resamples
        alpha: Band level

    Returns:
        EmpiricalLaplace
    """
    if conditioning not in ("none", "positive"):
        raise ValueError(f"unknown conditioning {conditioning!r}")
    rng = rng or rngs.generator(0, "bootstrap")
    x = np.asarray(samples, dtype=float)
    if conditioning == "positive":
        x = x[x > 0]
    lams = np.asarray(lambda_grid, dtype=float)
    warnings: List[str] = []
    if len(x) < MIN_EFFECTIVE_SAMPLES:
        msg = f"only {len(x)} effective samples for the Laplace transform"
        logger.warning(f"⚠️ {msg}")
        warnings.append(msg)
    if len(x) == 0:
        nan = tuple(float("nan") for _ in lams)
        return EmpiricalLaplace(tuple(lams), nan, nan, nan, nan, 0, conditioning, tuple(warnings))
    values = np.exp(-np.outer(x, lams))
    est = values.mean(axis=0)
    boot = bootstrap_means(values, n_resamples, rng)
    lo, hi = np.percentile(boot, [100 * alpha / 2, 100 * (1 - alpha / 2)], axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(len(x)) if len(x) > 1 else np.zeros(len(lams))
    return EmpiricalLaplace(
        lambdas=tuple(float(v) for v in lams),
        values=tuple(float(v) for v in est),
        band_lo=tuple(float(v) for v in lo),
        band_hi=tuple(float(v) for v in hi),
        se=tuple(float(v) for v in se),
        n_effective=len(x),
        conditioning=conditioning,
        warnings=tuple(warnings),
    )


def empirical_pgf(samples: Sequence[int], s: float) -> Tuple[float, float]:
    """E[s^X] and its standard error"""
    x = np.asarray(samples, dtype=float)
    v = np.power(s, x)
    se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return float(v.mean()), float(se)


def _merge_columns(table: np.ndarray, min_expected: float, expected_row: Optional[int] = None) -> np.ndarray:
    """Merge adjacent columns until every expected count reaches min_expected

    Expected counts are the contingency-table ones, or row expected_row when given.
    """
    total = table.sum()
    row_share = table.sum(axis=1) / total
    merged: List[np.ndarray] = []
    acc = np.zeros(table.shape[0])
    for col in table.T:
        acc = acc + col
        expected = acc[expected_row] if expected_row is not None else (row_share * acc.sum()).min()
        if expected >= min_expected:
            merged.append(acc)
            acc = np.zeros(table.shape[0])
    if acc.sum() > 0:
        if merged:
            merged[-1] = merged[-1] + acc
        else:
            merged.append(acc)
    return np.array(merged).T


def _bin_edges(pooled: np.ndarray, max_bins: int = 20) -> np.ndarray:
    values = np.unique(pooled)
    if len(values) <= 50:
        return values
    return np.unique(np.quantile(pooled, np.linspace(0, 1, max_bins + 1)[:-1]))


def chi_square_two_sample(a: Sequence[float], b: Sequence[float]) -> TestReport:
    """Chi-square homogeneity test on pooled-quantile bins, merged to at least MIN_BIN_COUNT expected"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    edges = _bin_edges(np.concatenate([a, b]))
    count = len(edges)
    ca = np.bincount(np.searchsorted(edges, a, side="right") - 1, minlength=count)
    cb = np.bincount(np.searchsorted(edges, b, side="right") - 1, minlength=count)
    table = _merge_columns(np.vstack([ca, cb]).astype(float), MIN_BIN_COUNT)
    warnings = _size_warnings(len(a), len(b))
    if table.shape[1] < 2:
        return TestReport(test="chi2-two-sample", statistic=0.0, p_value=1.0, bins=table.shape[1],
                          n_a=len(a), n_b=len(b), degenerate=True, warnings=warnings)
    stat, p_value, _, _ = stats.chi2_contingency(table, correction=False)
    return TestReport(test="chi2-two-sample", statistic=float(stat), p_value=float(p_value),
                      bins=table.shape[1], n_a=len(a), n_b=len(b), warnings=warnings)


def chi_square_pmf(sample: Sequence[int], pmf: Callable[[int], float]) -> TestReport:
    """One-sample chi-square of non-negative integer draws against an exact pmf; the upper tail is one bin"""
    x = np.asarray(sample, dtype=np.int64)
    n = len(x)
    top = int(x.max()) if n else 0
    observed = np.bincount(x, minlength=top + 1).astype(float)
    expected = np.array([pmf(j) for j in range(top + 1)]) * n
    expected[-1] += max(n - expected.sum(), 0.0)
    table = _merge_columns(np.vstack([observed, expected]), MIN_BIN_COUNT, expected_row=1)
    warnings = _size_warnings(n)
    if table.shape[1] < 2:
        return TestReport(test="chi2-pmf", statistic=0.0, p_value=1.0, bins=table.shape[1],
                          n_a=n, degenerate=True, warnings=warnings)
    obs, exp = table
    exp = exp * obs.sum() / exp.sum()
    stat, p_value = stats.chisquare(obs, exp)
    return TestReport(test="chi2-pmf", statistic=float(stat), p_value=float(p_value),
                      bins=table.shape[1], n_a=n, warnings=warnings)


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> TestReport:
    res = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float), method="asymp")
    return TestReport(test="ks-two-sample", statistic=float(res.statistic), p_value=float(res.pvalue),
                      n_a=len(a), n_b=len(b), warnings=_size_warnings(len(a), len(b)))


def _size_warnings(*sizes: int) -> List[str]:
    if min(sizes) < MIN_GOF_SAMPLES:
        msg = f"goodness-of-fit on only {min(sizes)} samples"
        logger.warning(f"⚠️ {msg}")
        return [msg]
    return []


def gof_tests(
    sample_a: Sequence[float],
    sample_b: Optional[Sequence[float]] = None,
    pmf: Optional[Callable[[int], float]] = None,
) -> List[TestReport]:
    """
    Goodness-of-fit of sample_a against another sample (chi-square and KS) or an exact pmf (chi-square)
    """
    if (sample_b is None) == (pmf is None):
        raise ValueError("give exactly one of sample_b and pmf")
    if pmf is not None:
        return [chi_square_pmf(sample_a, pmf)]
    return [chi_square_two_sample(sample_a, sample_b), ks_two_sample(sample_a, sample_b)]


def hill_estimator(x: np.ndarray, k: int) -> float:
    """Hill tail index from the k largest order statistics of a positive sample"""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if k < 1 or k >= n:
        raise ValueError("need 1 <= k < n")
    logs = np.log(x[n - k:]) - math.log(x[n - k - 1])
    mean = logs.mean()
    return float(1.0 / mean) if mean > 0 else float("inf")


def tail_index_fit(sample: Sequence[float], window: Tuple[float, float] = TAIL_WINDOW) -> TailFit:
    """
    Power-law tail P(X > r) ~ c r^(-alpha)

    The index and constant come from least squares of log P(X > r) on log r
    over the empirical quantile window; the Hill estimator on the top 10% is a
    cross-check, and a drift between the top 10% and top 1% Hill indices marks a
    tail that is not regularly varying.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    warnings: List[str] = []
    if n < MIN_TAIL_SAMPLES:
        warnings.append(f"tail fit on only {n} samples")
    lo_r, hi_r = np.quantile(x, window)
    grid = np.unique(x[(x >= lo_r) & (x <= hi_r) & (x > 0)])
    survival = 1.0 - np.searchsorted(x, grid, side="right") / n
    ok = survival > 0
    grid, survival = grid[ok], survival[ok]
    if len(grid) < 3:
        raise ValueError("not enough distinct values in the tail window")
    fit = stats.linregress(np.log(grid), np.log(survival))
    index = -float(fit.slope)
    constant = math.exp(fit.intercept)

    positive = x[x > 0]
    k10 = max(1, len(positive) // 10)
    k1 = max(1, len(positive) // 100)
    hill = hill_estimator(positive, k10) if len(positive) > k10 else float("nan")
    hill_top = hill_estimator(positive, k1) if len(positive) > k1 else float("nan")
    heavy = bool(abs(hill_top - hill) <= TAIL_INDEX_BAND * hill)
    if not heavy:
        warnings.append(f"Hill index drifts from {hill:.3f} (top 10%) to {hill_top:.3f} (top 1%)")
    if abs(hill - index) > TAIL_INDEX_BAND:
        warnings.append(f"Hill index {hill:.3f} and regression index {index:.3f} disagree")
    for msg in warnings:
        logger.warning(f"⚠️ {msg}")
    return TailFit(
        index=index,
        constant=constant,
        scale=constant ** (1.0 / index) if index > 0 else float("nan"),
        hill_index=hill,
        regression_index=index,
        regression_intercept_se=float(fit.intercept_stderr),
        constant_relative_se=float(fit.intercept_stderr),
        hill_index_top=hill_top,
        window=(float(window[0]), float(window[1])),
        n_tail=int(len(grid)),
        heavy_tailed=heavy,
        warnings=warnings,
    )


def power_mean(mean: float, se_mean: float, power: float, se_power: float) -> Tuple[float, float]:
    """
    mean ** (1 / power) with its delta-method standard error

    Treats the two estimates as independent.
    """
    if mean <= 0 or power <= 0:
        return float("nan"), float("nan")
    value = mean ** (1.0 / power)
    log_mean = math.log(mean)
    var_log = (se_mean / (mean * power)) ** 2 + (log_mean * se_power / power ** 2) ** 2
    return value, value * math.sqrt(var_log)
