"""From-scratch statistics for the analysis pipeline.

Implements exactly what the pipeline needs and nothing more: linear-interp
quantiles, OLS with the joint (intercept, slope) = (0, 1) F-test, a one-sided
t-test, a one-sided Mann-Whitney U test (exact for small samples, normal
approximation with tie and continuity corrections otherwise), and Cohen's
kappa. Tail probabilities come from a regularized incomplete beta implemented
with the Lentz continued fraction; tests validate it against frozen
high-precision reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import groupby
from typing import Optional, Sequence

from .errors import InsufficientDataError, InvalidInputError

# Relative tolerance for "exactly zero residual" style degeneracy checks;
# float round-trips through Eq. 1 leave ~1e-15 noise on otherwise exact fits.
_DEGENERATE_RTOL = 1e-9


@dataclass
class TestResult:
    """Outcome of a hypothesis test."""

    statistic: float
    p_value: float
    dof: object = None
    degenerate: bool = False
    reason: str = ""

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_value <= 1.0 or math.isnan(self.p_value)):
            raise InvalidInputError(f"p-value {self.p_value} outside [0, 1]")

    def reject_at(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha


@dataclass
class OlsFit:
    """A simple y = a0 + a1*x least-squares fit with what the F-test needs."""

    intercept: float
    slope: float
    s2: float
    n: int
    xtx_inv: tuple[tuple[float, float], tuple[float, float]]
    singular: bool = False
    zero_residuals: bool = False


# ---------------------------------------------------------------------------
# Distribution tails
# ---------------------------------------------------------------------------

def norm_sf(z: float) -> float:
    """Upper tail of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    MAXIT, EPS, FPMIN = 200, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, dof: float) -> float:
    """Upper tail P(T >= t) of Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise InvalidInputError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    half = 0.5 * betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t))
    return half if t > 0 else 1.0 - half


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail P(F >= f) of the F distribution with (d1, d2) dof."""
    if d1 <= 0 or d2 <= 0:
        raise InvalidInputError("degrees of freedom must be positive")
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


# ---------------------------------------------------------------------------
# Quantiles
# ---------------------------------------------------------------------------

def quantile_linear(data: Sequence[float], q: float) -> float:
    """Quantile by linear interpolation between order statistics.

    Position is q*(n-1), 0-based (the convention pinned by the reference
    IQR value of the c = 400 bubble path).
    """
    if len(data) == 0:
        raise InvalidInputError("cannot take a quantile of empty data")
    if not (0.0 <= q <= 1.0):
        raise InvalidInputError(f"quantile level {q} outside [0, 1]")
    xs = sorted(data)
    pos = q * (len(xs) - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    if lo == hi:
        return xs[lo]
    frac = pos - lo
    return xs[lo] * (1.0 - frac) + xs[hi] * frac


def iqr(data: Sequence[float]) -> float:
    """Interquartile range Q3 - Q1 under the linear-interpolation convention."""
    return quantile_linear(data, 0.75) - quantile_linear(data, 0.25)


# ---------------------------------------------------------------------------
# OLS and the joint unbiasedness test
# ---------------------------------------------------------------------------

def ols_fit(x: Sequence[float], y: Sequence[float]) -> OlsFit:
    """Least-squares fit of y = a0 + a1*x."""
    n = len(x)
    if n != len(y):
        raise InvalidInputError("x and y must have equal length")
    if n < 2:
        raise InsufficientDataError("need at least 2 observations for a fit")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((xi - mx) ** 2 for xi in x)
    sxy = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    scale = max(1.0, max(abs(v) for v in x)) ** 2
    if sxx <= n * scale * (_DEGENERATE_RTOL**2):
        return OlsFit(
            intercept=my, slope=0.0, s2=float("nan"), n=n,
            xtx_inv=((float("nan"),) * 2,) * 2, singular=True,
        )
    slope = sxy / sxx
    intercept = my - slope * mx
    resid = [yi - intercept - slope * xi for xi, yi in zip(x, y)]
    rss = sum(e * e for e in resid)
    yscale = max(1.0, max(abs(v) for v in y)) ** 2
    zero_resid = rss <= n * yscale * (_DEGENERATE_RTOL**2)
    s2 = rss / (n - 2) if n > 2 else float("nan")
    sx2 = sum(xi * xi for xi in x)
    # (X'X)^-1 for X = [1, x]
    det = n * sx2 - (n * mx) ** 2
    xtx_inv = (
        (sx2 / det, -n * mx / det),
        (-n * mx / det, n / det),
    )
    return OlsFit(intercept, slope, s2, n, xtx_inv, singular=False, zero_residuals=zero_resid)


def ols_joint_test(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Joint F-test of intercept = 0 and slope = 1 in y = a0 + a1*x.

    F = ((RSS_restricted - RSS_unrestricted) / 2) / (RSS_unrestricted / (n-2)),
    with RSS_restricted = sum (y - x)^2, against F(2, n-2).

    Degenerate cases:
      * perfect fit on the identity line -> non-rejection (p = 1);
      * perfect fit elsewhere -> rejection (p = 0, flagged);
      * constant regressor -> rejection iff any y differs from x (flagged).
    """
    n = len(x)
    if n != len(y):
        raise InvalidInputError("x and y must have equal length")
    if n < 3:
        raise InsufficientDataError("need at least 3 observations for the joint test")
    scale = max(1.0, max(abs(v) for v in x), max(abs(v) for v in y))
    errors_zero = all(abs(yi - xi) <= _DEGENERATE_RTOL * scale for xi, yi in zip(x, y))
    fit = ols_fit(x, y)
    if fit.singular:
        if errors_zero:
            return TestResult(0.0, 1.0, dof=(2, n - 2), degenerate=True,
                              reason="constant regressor, zero errors")
        return TestResult(float("inf"), 0.0, dof=(2, n - 2), degenerate=True,
                          reason="constant regressor with nonzero errors")
    rss_r = sum((yi - xi) ** 2 for xi, yi in zip(x, y))
    resid = [yi - fit.intercept - fit.slope * xi for xi, yi in zip(x, y)]
    rss_u = sum(e * e for e in resid)
    if fit.zero_residuals:
        if errors_zero:
            return TestResult(0.0, 1.0, dof=(2, n - 2), degenerate=True,
                              reason="exact fit on the identity line")
        return TestResult(float("inf"), 0.0, dof=(2, n - 2), degenerate=True,
                          reason="exact fit away from the identity line")
    F = ((rss_r - rss_u) / 2.0) / (rss_u / (n - 2))
    F = max(F, 0.0)  # guards tiny negative from float cancellation
    return TestResult(F, f_sf(F, 2, n - 2), dof=(2, n - 2))


# ---------------------------------------------------------------------------
# One-sided t-test
# ---------------------------------------------------------------------------

def t_test_one_sided_greater(sample: Sequence[float], mu0: float) -> TestResult:
    """Test H0: mean <= mu0 against H1: mean > mu0."""
    n = len(sample)
    if n == 0:
        raise InvalidInputError("empty sample")
    mean = sum(sample) / n
    if n == 1:
        return TestResult(float("nan"), 1.0, dof=0, degenerate=True,
                          reason="single observation")
    var = sum((v - mean) ** 2 for v in sample) / (n - 1)
    sd = math.sqrt(var)
    if sd == 0.0:
        if mean > mu0:
            return TestResult(float("inf"), 0.0, dof=n - 1, degenerate=True,
                              reason="zero variance, mean above threshold")
        return TestResult(float("-inf"), 1.0, dof=n - 1, degenerate=True,
                          reason="zero variance, mean not above threshold")
    t = (mean - mu0) / (sd / math.sqrt(n))
    return TestResult(t, t_sf(t, n - 1), dof=n - 1)


# ---------------------------------------------------------------------------
# Mann-Whitney U (one-sided, "a stochastically greater than b")
# ---------------------------------------------------------------------------

def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _exact_mw_upper_tail(ranks2: list[int], n_a: int, r_obs2: int) -> float:
    """P(rank-sum of a size-n_a subset >= r_obs2), ranks doubled to integers.

    Subset-sum dynamic program over the pooled (doubled) midranks; counts are
    exact integers, conditioning on the observed tie pattern.
    """
    # ways[k][s] = number of k-subsets with doubled-rank sum s
    ways: list[dict[int, int]] = [dict() for _ in range(n_a + 1)]
    ways[0][0] = 1
    for r in ranks2:
        for k in range(min(n_a, len(ranks2)) - 1, -1, -1):
            if not ways[k]:
                continue
            dst = ways[k + 1]
            for s, cnt in ways[k].items():
                dst[s + r] = dst.get(s + r, 0) + cnt
    dist = ways[n_a]
    n_subsets = sum(dist.values())
    tail = sum(cnt for s, cnt in dist.items() if s >= r_obs2)
    return tail / n_subsets


def mann_whitney_one_sided(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """One-sided Mann-Whitney U test of "a stochastically greater than b".

    Small samples (up to ~200k subsets) get the exact conditional permutation
    distribution; larger samples use the normal approximation with midrank tie
    correction and a 0.5 continuity correction.
    """
    n_a, n_b = len(a), len(b)
    if n_a == 0 or n_b == 0:
        raise InvalidInputError("both samples must be non-empty")
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    r_a = sum(ranks[:n_a])
    u_a = r_a - n_a * (n_a + 1) / 2.0
    n = n_a + n_b
    if math.comb(n, n_a) <= 200_000:
        ranks2 = [round(2 * r) for r in ranks]
        r_obs2 = round(2 * r_a)
        p = _exact_mw_upper_tail(ranks2, n_a, r_obs2)
        return TestResult(u_a, p, dof=None)
    mu = n_a * n_b / 2.0
    tie_counts = [len(list(g)) for _, g in groupby(sorted(pooled))]
    tie_term = sum(t**3 - t for t in tie_counts) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return TestResult(u_a, 0.5, dof=None, degenerate=True, reason="all values tied")
    z = (u_a - 0.5 - mu) / math.sqrt(var)
    return TestResult(u_a, norm_sf(z), dof=None)


# ---------------------------------------------------------------------------
# Cohen's kappa
# ---------------------------------------------------------------------------

def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Cohen's kappa (p_o - p_e) / (1 - p_e) with marginal-product p_e.

    Both raters constant: 1.0 if they agree, -1.0 if they do not (the
    marginal-product formula is undefined or misleading there).
    """
    n = len(labels_a)
    if n != len(labels_b) or n == 0:
        raise InvalidInputError("label lists must be non-empty and equal-length")
    set_a, set_b = set(labels_a), set(labels_b)
    if len(set_a) == 1 and len(set_b) == 1:
        return 1.0 if labels_a[0] == labels_b[0] else -1.0
    p_o = sum(1 for x, y in zip(labels_a, labels_b) if x == y) / n
    cats = set_a | set_b
    p_e = sum(
        (sum(1 for x in labels_a if x == c) / n) * (sum(1 for y in labels_b if y == c) / n)
        for c in cats
    )
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else -1.0
    return (p_o - p_e) / (1.0 - p_e)


# ---------------------------------------------------------------------------
# Small shared helpers
# ---------------------------------------------------------------------------

def mean(xs: Sequence[float]) -> float:
    if len(xs) == 0:
        raise InvalidInputError("mean of empty sequence")
    return sum(xs) / len(xs)


def sample_std(xs: Sequence[float]) -> float:
    """Standard deviation with the 1/(n-1) convention."""
    n = len(xs)
    if n < 2:
        raise InsufficientDataError("need at least 2 values for a sample std")
    m = mean(xs)
    return math.sqrt(sum((v - m) ** 2 for v in xs) / (n - 1))
