"""Signed-rank tests, correlation, least-squares intervals and bootstrap slopes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import stats as sps

from gaitscale.errors import GaitscaleError

logger = logging.getLogger(__name__)

DEFAULT_EXACT_CUTOFF = 12
DEFAULT_BOOTSTRAP_REPLICATES = 2000
MIN_BOOTSTRAP_REPLICATES = 1000
MIN_PAIRS = 5


class AllZeroDiffs(GaitscaleError):
    """Every paired difference is zero."""


class ConstantInput(GaitscaleError):
    """A series has zero variance."""


class DegenerateX(GaitscaleError):
    """The regressor has zero variance."""


class InsufficientDf(DegenerateX):
    """No residual degrees of freedom for an interval."""


class TooFewPairs(GaitscaleError):
    """Fewer paired observations than the procedure needs."""


def significance_stars(p_value: float) -> str:
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    method: Literal["exact", "approx"]

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


@lru_cache(maxsize=64)
def _signed_rank_counts(n: int) -> np.ndarray:
    """Number of sign patterns over ranks 1..n for each positive-rank sum."""
    counts = np.zeros(n * (n + 1) // 2 + 1)
    counts[0] = 1.0
    for rank in range(1, n + 1):
        counts[rank:] = counts[rank:] + counts[:-rank].copy()
    return counts


def wilcoxon_signed_rank_one_sided(
    diffs, exact_cutoff: int = DEFAULT_EXACT_CUTOFF
) -> TestResult:
    """One-sided signed-rank test of H1: median difference > 0.

    Zero differences are dropped and ties get mid-ranks. Up to
    ``exact_cutoff`` nonzero differences the p-value is P(W+ >= observed)
    under all 2^n sign patterns of the ranks 1..n; above it a normal
    approximation with tie and continuity corrections is used.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDiffs("all differences are zero")
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_cutoff:
        counts = _signed_rank_counts(n)
        threshold = int(np.ceil(w_plus - 1e-9))
        p = float(counts[threshold:].sum() / 2.0**n)
        return TestResult(statistic=w_plus, p_value=min(1.0, p), n=n, method="exact")
    _, tie_sizes = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes**3 - tie_sizes) / 48.0
    z = (w_plus - mean - 0.5) / np.sqrt(var)
    return TestResult(statistic=w_plus, p_value=float(sps.norm.sf(z)), n=n, method="approx")


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"series lengths differ: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise TooFewPairs(f"correlation needs 3 pairs, got {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("correlation is undefined for a constant series")
    return float(sps.pearsonr(x, y).statistic)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    confidence: float
    n: int
    band_x: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray


def linfit_ci(x, y, confidence: float = 0.95, band_points: int = 50) -> LinearFit:
    """OLS line with a t-based slope interval and a pointwise mean-response band."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 2 or np.ptp(x) == 0:
        raise DegenerateX("regressor has zero variance")
    if n == 2:
        raise InsufficientDf("two points leave no degrees of freedom for an interval")
    fit = sps.linregress(x, y)
    slope, intercept = float(fit.slope), float(fit.intercept)
    t = float(sps.t.ppf(0.5 + confidence / 2.0, n - 2))
    half = t * fit.stderr
    # residual variance s2 = stderr**2 * sxx
    sxx = float(np.sum((x - x.mean()) ** 2))
    band_x = np.linspace(x.min(), x.max(), band_points)
    band_half = t * fit.stderr * np.sqrt(sxx / n + (band_x - x.mean()) ** 2)
    centre = intercept + slope * band_x
    return LinearFit(
        slope=slope,
        intercept=intercept,
        slope_ci=(slope - half, slope + half),
        confidence=confidence,
        n=n,
        band_x=band_x,
        band_low=centre - band_half,
        band_high=centre + band_half,
    )


@dataclass(frozen=True)
class BootstrapResult:
    replicates: np.ndarray
    median: float
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float
    seed: int

    def summary(self) -> dict[str, float | int]:
        return {
            "median": self.median,
            "q25": self.q25,
            "q75": self.q75,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "replicates": int(self.replicates.size),
            "seed": self.seed,
        }


def _resampled_slopes(x: np.ndarray, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    xs, ys = x[idx], y[idx]
    xc = xs - xs.mean(axis=1, keepdims=True)
    sxx = np.sum(xc**2, axis=1)
    sxy = np.sum(xc * (ys - ys.mean(axis=1, keepdims=True)), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sxx > 0, sxy / np.where(sxx > 0, sxx, 1.0), np.nan)


def bootstrap_slope(
    x, y, replicates: int = DEFAULT_BOOTSTRAP_REPLICATES, seed: int = 0
) -> BootstrapResult:
    """OLS slopes of ``replicates`` pair resamples, summarised with 1.5 IQR whiskers.

    Resamples whose x values are all equal are redrawn.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < MIN_PAIRS:
        raise TooFewPairs(f"bootstrap needs {MIN_PAIRS} pairs, got {n}")
    if replicates < MIN_BOOTSTRAP_REPLICATES:
        raise ValueError(f"at least {MIN_BOOTSTRAP_REPLICATES} replicates required, got {replicates}")
    if np.ptp(x) == 0:
        raise DegenerateX("regressor has zero variance")
    rng = np.random.default_rng(seed)
    slopes = _resampled_slopes(x, y, rng.integers(0, n, size=(replicates, n)))
    bad = np.flatnonzero(~np.isfinite(slopes))
    while bad.size:
        slopes[bad] = _resampled_slopes(x, y, rng.integers(0, n, size=(bad.size, n)))
        bad = bad[~np.isfinite(slopes[bad])]
    q25, median, q75 = np.percentile(slopes, [25, 50, 75])
    iqr = q75 - q25
    inside = slopes[(slopes >= q25 - 1.5 * iqr) & (slopes <= q75 + 1.5 * iqr)]
    return BootstrapResult(
        replicates=slopes,
        median=float(median),
        q25=float(q25),
        q75=float(q75),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        seed=seed,
    )
