"""Ledger-level anomaly screens: first-digit conformance, round-number
clustering, and power-law tail estimation.

These operate on positive sale prices only; zero-value transfers must be
filtered out before calling.
"""

import math
from dataclasses import dataclass, field

import numpy as np

# P(first digit = d) under the logarithmic first-digit law
FIRST_DIGIT_EXPECTED = tuple(math.log10(1 + 1 / d) for d in range(1, 10))

# chi-squared critical value at the 5% level with 8 degrees of freedom
CHI2_CRITICAL_5PCT_DF8 = 15.507


@dataclass
class DigitDistribution:
    counts: tuple[int, ...]  # digits 1..9

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def proportions(self) -> tuple[float, ...]:
        n = self.total
        return tuple(c / n for c in self.counts)

    def count_for(self, digit: int) -> int:
        return self.counts[digit - 1]


def first_significant_digit(price: float) -> int:
    """Leading nonzero digit of a positive number (0.042 -> 4)."""
    if not (price > 0) or not math.isfinite(price):
        raise ValueError(f"price must be positive and finite, got {price!r}")
    # scientific notation keeps the full mantissa, so the first character is
    # exactly the leading digit with no rounding surprises
    return int(f"{price:.16e}"[0])


def first_digit_distribution(prices) -> DigitDistribution:
    """Tally first significant digits of positive prices."""
    prices = list(prices)
    if not prices:
        raise ValueError("no prices given")
    counts = [0] * 9
    for p in prices:
        counts[first_significant_digit(p) - 1] += 1
    return DigitDistribution(counts=tuple(counts))


@dataclass
class BenfordTestResult:
    chi_squared: float
    degrees_of_freedom: int = 8
    critical_value_5pct: float = CHI2_CRITICAL_5PCT_DF8
    reject: bool = False

    def __post_init__(self):
        self.reject = self.chi_squared > self.critical_value_5pct


def benford_chi_squared(dist: DigitDistribution) -> BenfordTestResult:
    """Chi-squared test of the observed digit counts against the
    logarithmic law. 9 categories give 8 degrees of freedom; the null is
    rejected at the 5% level above 15.507."""
    n = dist.total
    if n <= 0:
        raise ValueError("digit distribution is empty")
    chi = 0.0
    for observed, p in zip(dist.counts, FIRST_DIGIT_EXPECTED):
        expected = n * p
        chi += (observed - expected) ** 2 / expected
    return BenfordTestResult(chi_squared=chi)


@dataclass
class RoundPriceHistogram:
    counts: dict[int, int]
    multiple_of_five_ratio: float
    total: int = field(init=False)

    def __post_init__(self):
        self.total = sum(self.counts.values())


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def round_price_histogram(prices, max_price: int) -> RoundPriceHistogram:
    """Histogram of prices rounded half-up to whole units, restricted to
    [0, max_price], plus the share of mass sitting on multiples of 5."""
    if max_price < 1:
        raise ValueError("max_price must be >= 1")
    counts: dict[int, int] = {}
    for p in prices:
        r = _round_half_up(p)
        if 0 <= r <= max_price:
            counts[r] = counts.get(r, 0) + 1
    total = sum(counts.values())
    on_fives = sum(c for r, c in counts.items() if r % 5 == 0)
    ratio = on_fives / total if total else 0.0
    return RoundPriceHistogram(counts=dict(sorted(counts.items())), multiple_of_five_ratio=ratio)


def tail_exponent(prices, tail_fraction: float = 0.05) -> float:
    """Hill estimate of the power-law exponent from the top order statistics.

    Uses the largest floor(n * tail_fraction) samples. Needs at least 50
    samples in the tail and non-degenerate data.
    """
    if not (0 < tail_fraction <= 0.2):
        raise ValueError("tail_fraction must be in (0, 0.2]")
    x = np.asarray(list(prices), dtype=float)
    if x.size and (np.any(x <= 0) or not np.all(np.isfinite(x))):
        raise ValueError("prices must be positive and finite")
    k = int(math.floor(x.size * tail_fraction))
    if k < 50:
        raise ValueError(f"insufficient tail: {k} samples, need at least 50")
    x_sorted = np.sort(x)[::-1]
    top = x_sorted[:k]
    threshold = x_sorted[k]
    if threshold <= 0 or np.all(top == threshold):
        raise ValueError("degenerate tail: constant data")
    hill = float(np.mean(np.log(top) - np.log(threshold)))
    if hill <= 0:
        raise ValueError("degenerate tail: constant data")
    return 1.0 / hill


__all__ = [
    "FIRST_DIGIT_EXPECTED",
    "CHI2_CRITICAL_5PCT_DF8",
    "DigitDistribution",
    "BenfordTestResult",
    "RoundPriceHistogram",
    "first_significant_digit",
    "first_digit_distribution",
    "benford_chi_squared",
    "round_price_histogram",
    "tail_exponent",
]
