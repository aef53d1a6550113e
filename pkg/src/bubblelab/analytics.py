"""Market-level measures, bubble detection and shape, rationality tests,
error decomposition, run categorization, robustness grid, and aggregation.

All functions are pure over immutable run data. Periods are 1-based
throughout; a "price series" is p_1 .. p_T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import InvalidInputError
from .market import RunLog, fundamental_price
from .stats import (
    TestResult,
    cohen_kappa,
    iqr,
    mean,
    ols_joint_test,
    sample_std,
    t_test_one_sided_greater,
)

BUBBLE_THRESHOLD_MULTIPLE = 5.0   # price must exceed 5x fundamental ...
BUBBLE_MIN_DURATION = 3           # ... for at least this many consecutive periods
BUBBLE_MEAN_MULTIPLE = 2.0        # mean-price variant: mean above 2x fundamental
PEAK_WINDOW_RADIUS = 3            # "first local maximum within a seven-period window"

GRID_THRESHOLD_MULTIPLES = (3.0, 4.0, 5.0, 6.0, 7.0)   # 180..420 for p^f = 60
GRID_DURATIONS = (3, 5, 7)
GRID_MEAN_MULTIPLES = (1.5, 2.0, 2.5, 3.0)              # 90..180 for p^f = 60

CATEGORY_NO_BUBBLE_LOW = "No bubble (low volatility)"
CATEGORY_NO_BUBBLE_VOL = "No bubble (volatility)"
CATEGORY_BUBBLE_EARLY = "Bubble (early volatility)"
CATEGORY_BUBBLE_LATE = "Bubble (late volatility)"
CATEGORY_BUBBLE_PERSISTENT = "Bubble (persistent volatility)"
ALL_CATEGORIES = (
    CATEGORY_NO_BUBBLE_LOW,
    CATEGORY_NO_BUBBLE_VOL,
    CATEGORY_BUBBLE_EARLY,
    CATEGORY_BUBBLE_LATE,
    CATEGORY_BUBBLE_PERSISTENT,
)
CALM_HALF_STD = 20.0
VOLATILE_HALF_STD = 100.0


@dataclass
class MeasureSet:
    """Mispricing and variability measures of one price series.

    rd/rad/gd/gad/rdmax are dimensionless multiples of the fundamental;
    iqr/std are in price units. gd/gad are None when the series contains a
    non-positive price (their logs are undefined there).
    """

    rd: float
    rad: float
    gd: Optional[float]
    gad: Optional[float]
    rdmax: float
    iqr: float
    std: float


@dataclass
class BubbleShape:
    detected: bool
    start: Optional[int] = None
    peak: Optional[int] = None
    peak_price: Optional[float] = None
    time_to_form: Optional[int] = None
    half_life: Optional[int] = None


@dataclass
class RunReport:
    """Everything the summary table needs about one run."""

    measures: MeasureSet
    bubble: bool
    bubble_mean: bool
    shape: BubbleShape
    spec_test: Optional[TestResult]
    spec_flags: list[str]
    bias_tests: list[TestResult]
    bias_fraction: float
    dispersion_error: float
    common_error: float
    category: str
    category_flags: list[str] = field(default_factory=list)
    alpha: float = 0.05
    incomplete: bool = False

    @property
    def speculative(self) -> Optional[bool]:
        if self.spec_test is None:
            return None
        return self.spec_test.reject_at(self.alpha)


def compute_measures(prices: Sequence[float], p_f: float) -> MeasureSet:
    """All deviation/variability measures of a price series."""
    if len(prices) < 2:
        raise InvalidInputError("need at least 2 prices")
    if p_f <= 0:
        raise InvalidInputError("fundamental price must be positive")
    rel = [(p - p_f) / p_f for p in prices]
    rd = mean(rel)
    rad = mean([abs(v) for v in rel])
    rdmax = max(rel)
    if all(p > 0 for p in prices):
        logs = [math.log(p / p_f) for p in prices]
        gd = math.exp(mean(logs)) - 1.0
        gad = math.exp(mean([abs(v) for v in logs])) - 1.0
    else:
        gd = gad = None
    return MeasureSet(
        rd=rd, rad=rad, gd=gd, gad=gad, rdmax=rdmax,
        iqr=iqr(prices), std=sample_std(prices),
    )


def geometric_deviations(prices: Sequence[float], p_f: float) -> tuple[float, float]:
    """(GD, GAD); raises on non-positive prices rather than returning None."""
    if any(p <= 0 for p in prices):
        raise InvalidInputError("geometric measures need strictly positive prices")
    m = compute_measures(prices, p_f)
    assert m.gd is not None and m.gad is not None
    return m.gd, m.gad


def detect_bubble(
    prices: Sequence[float],
    threshold: float,
    duration: int = BUBBLE_MIN_DURATION,
) -> bool:
    """True iff some ``duration`` consecutive prices all strictly exceed threshold."""
    if duration < 1:
        raise InvalidInputError("duration must be >= 1")
    run = 0
    for p in prices:
        run = run + 1 if p > threshold else 0
        if run >= duration:
            return True
    return False


def detect_bubble_mean(prices: Sequence[float], p_f: float,
                       multiplier: float = BUBBLE_MEAN_MULTIPLE) -> bool:
    """True iff the mean price exceeds ``multiplier`` times the fundamental."""
    return mean(prices) > multiplier * p_f


def bubble_shape(
    prices: Sequence[float],
    p_f: float,
    threshold: Optional[float] = None,
    duration: int = BUBBLE_MIN_DURATION,
) -> BubbleShape:
    """Start/peak/half-life of the first bubble (if any).

    Peak: first period that is the maximum of its centered seven-period
    window (truncated at the ends) and exceeds the threshold. Start: earliest
    period from which prices stay above the fundamental through the peak.
    Half-life: periods after the peak until the price first drops below half
    the peak; absent if it never does.
    """
    if threshold is None:
        threshold = BUBBLE_THRESHOLD_MULTIPLE * p_f
    if not detect_bubble(prices, threshold, duration):
        return BubbleShape(detected=False)
    T = len(prices)
    peak = None
    for t in range(1, T + 1):
        lo = max(1, t - PEAK_WINDOW_RADIUS)
        hi = min(T, t + PEAK_WINDOW_RADIUS)
        window_max = max(prices[lo - 1:hi])
        if prices[t - 1] >= window_max and prices[t - 1] > threshold:
            peak = t
            break
    assert peak is not None  # detect_bubble guarantees a qualifying window
    start = peak
    while start > 1 and prices[start - 2] > p_f:
        start -= 1
    peak_price = prices[peak - 1]
    half_life = None
    for k in range(1, T - peak + 1):
        if prices[peak + k - 1] < peak_price / 2.0:
            half_life = k
            break
    return BubbleShape(
        detected=True, start=start, peak=peak, peak_price=peak_price,
        time_to_form=peak - start, half_life=half_life,
    )


def speculative_test(
    prices: Sequence[float],
    p_f: float,
    shape: BubbleShape,
    r: float,
) -> tuple[Optional[TestResult], list[str]]:
    """One-sided test of log-deviation growth above ln(1+r).

    q_t = ln(p_t - p_f) over [bubble start, first deceleration before the
    peak] (the peak caps the window). Periods with p_t <= p_f are dropped
    with a flag; differences are taken only between adjacent retained
    periods. Too-short windows yield a flagged degenerate non-rejection.
    """
    if not shape.detected:
        return None, ["no_bubble"]
    flags: list[str] = []
    start, peak = shape.start, shape.peak
    assert start is not None and peak is not None
    end = peak
    for t in range(start + 2, peak + 1):
        if prices[t - 1] - prices[t - 2] <= prices[t - 2] - prices[t - 3]:
            end = t
            break
    periods = [t for t in range(start, end + 1) if prices[t - 1] > p_f]
    if len(periods) < len(range(start, end + 1)):
        flags.append("log_domain_excluded")
    diffs = [
        math.log(prices[b - 1] - p_f) - math.log(prices[a - 1] - p_f)
        for a, b in zip(periods, periods[1:])
        if b == a + 1
    ]
    if len(diffs) < 1:
        flags.append("window_too_short")
        return TestResult(float("nan"), 1.0, degenerate=True, reason="window too short"), flags
    return t_test_one_sided_greater(diffs, math.log(1.0 + r)), flags


def bias_test_per_agent(run: RunLog) -> list[TestResult]:
    """Joint unbiasedness test of each agent's predictions against prices.

    Pairs every prediction p^e_{h,t} with the realised p_t over t = 1..T
    (period 1 uses the initial pair's first member).
    """
    prices = run.prices
    matrix = run.prediction_matrix()
    return [ols_joint_test(agent_preds, prices) for agent_preds in matrix]


def decompose_errors(run: RunLog) -> tuple[float, float]:
    """(dispersion error, common error) of the mean squared prediction error.

    Dispersion: average squared spread of individual predictions around the
    period's mean prediction. Common: average squared gap between the mean
    prediction and the realised price. Their sum is the mean individual
    squared error.
    """
    prices = run.prices
    matrix = run.prediction_matrix()
    return decompose_error_arrays(matrix, prices)


def decompose_error_arrays(
    predictions: Sequence[Sequence[float]], prices: Sequence[float]
) -> tuple[float, float]:
    H = len(predictions)
    T = len(prices)
    if H == 0 or T == 0:
        raise InvalidInputError("need at least one agent and one period")
    dispersion = 0.0
    common = 0.0
    for t in range(T):
        col = [predictions[h][t] for h in range(H)]
        pbar = mean(col)
        dispersion += sum((v - pbar) ** 2 for v in col)
        common += (pbar - prices[t]) ** 2
    return dispersion / (T * H), common / T


def categorize_run(
    prices: Sequence[float],
    bubble: bool,
    peak: Optional[int] = None,
) -> tuple[str, list[str]]:
    """Label a run by bubble presence and where its volatility lives.

    Halves split at ceil(T/2). No bubble: both half-stds below 20 is "low
    volatility", else "volatility". Bubble: classified by which half has a
    price standard deviation above 100; if neither does, falls back to the
    half containing the peak, flagged.
    """
    T = len(prices)
    split = math.ceil(T / 2)
    first = list(prices[:split])
    second = list(prices[split:])
    std1 = sample_std(first) if len(first) >= 2 else 0.0
    std2 = sample_std(second) if len(second) >= 2 else 0.0
    if not bubble:
        if std1 < CALM_HALF_STD and std2 < CALM_HALF_STD:
            return CATEGORY_NO_BUBBLE_LOW, []
        return CATEGORY_NO_BUBBLE_VOL, []
    early = std1 > VOLATILE_HALF_STD
    late = std2 > VOLATILE_HALF_STD
    if early and late:
        return CATEGORY_BUBBLE_PERSISTENT, []
    if early:
        return CATEGORY_BUBBLE_EARLY, []
    if late:
        return CATEGORY_BUBBLE_LATE, []
    flags = ["volatility_below_bubble_threshold"]
    if peak is not None and peak > split:
        return CATEGORY_BUBBLE_LATE, flags
    return CATEGORY_BUBBLE_EARLY, flags


def analyze_run(
    run: RunLog,
    alpha: float = 0.05,
    bubble_threshold_multiple: float = BUBBLE_THRESHOLD_MULTIPLE,
    bubble_duration: int = BUBBLE_MIN_DURATION,
) -> RunReport:
    """Full per-run report: measures, bubble, shape, SPEC, BIAS, errors, label."""
    prices = run.prices
    p_f = fundamental_price(run.params)
    measures = compute_measures(prices, p_f)
    threshold = bubble_threshold_multiple * p_f
    bubble = detect_bubble(prices, threshold, bubble_duration)
    shape = bubble_shape(prices, p_f, threshold, bubble_duration)
    spec_result, spec_flags = speculative_test(prices, p_f, shape, run.params.r)
    bias = bias_test_per_agent(run)
    bias_fraction = sum(1 for t in bias if t.reject_at(alpha)) / len(bias)
    dispersion, common = decompose_errors(run)
    category, cat_flags = categorize_run(prices, bubble, shape.peak)
    return RunReport(
        measures=measures,
        bubble=bubble,
        bubble_mean=detect_bubble_mean(prices, p_f),
        shape=shape,
        spec_test=spec_result,
        spec_flags=spec_flags,
        bias_tests=bias,
        bias_fraction=bias_fraction,
        dispersion_error=dispersion,
        common_error=common,
        category=category,
        category_flags=cat_flags,
        alpha=alpha,
        incomplete=run.incomplete,
    )


def robustness_grid(
    price_series: Sequence[Sequence[float]], p_f: float
) -> tuple[list[list[int]], list[list[float]], float]:
    """Label every run under all indicator variants; pairwise kappa matrix.

    15 threshold/duration variants of the consecutive-periods indicator plus
    4 mean-price variants: 19 classifiers. Returns (labels per classifier,
    19x19 kappa matrix, minimum kappa).
    """
    if len(price_series) < 2:
        raise InvalidInputError("grid needs at least 2 runs")
    labelings: list[list[int]] = []
    for multiple in GRID_THRESHOLD_MULTIPLES:
        for duration in GRID_DURATIONS:
            labelings.append([
                int(detect_bubble(p, multiple * p_f, duration)) for p in price_series
            ])
    for multiple in GRID_MEAN_MULTIPLES:
        labelings.append([int(detect_bubble_mean(p, p_f, multiple)) for p in price_series])
    n = len(labelings)
    kappas = [[cohen_kappa(labelings[i], labelings[j]) for j in range(n)] for i in range(n)]
    min_kappa = min(min(row) for row in kappas)
    return labelings, kappas, min_kappa


@dataclass
class CampaignSummary:
    """Campaign-level aggregation in the shape of the published summary rows."""

    n_runs: int
    rd: float
    rad: float
    gd: Optional[float]
    gad: Optional[float]
    rdmax: float
    iqr: float
    std: float
    p_bubble: float
    time_to_form: Optional[float]
    half_life: Optional[float]
    spec: Optional[float]
    bias: float
    dispersion_error: float
    common_error: float
    categories: dict[str, int]


def _mean_or_none(values: list) -> Optional[float]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    return sum(values) / len(values)


def aggregate_reports(reports: Sequence[RunReport]) -> CampaignSummary:
    """Average measures across runs; shape and SPEC over bubble runs only."""
    if not reports:
        raise InvalidInputError("need at least one report")
    bubble_reports = [r for r in reports if r.bubble]
    categories = {c: 0 for c in ALL_CATEGORIES}
    for r in reports:
        categories[r.category] = categories.get(r.category, 0) + 1
    total_agents = sum(len(r.bias_tests) for r in reports)
    biased = sum(
        sum(1 for t in r.bias_tests if t.reject_at(r.alpha)) for r in reports
    )
    return CampaignSummary(
        n_runs=len(reports),
        rd=mean([r.measures.rd for r in reports]),
        rad=mean([r.measures.rad for r in reports]),
        gd=_mean_or_none([r.measures.gd for r in reports]),
        gad=_mean_or_none([r.measures.gad for r in reports]),
        rdmax=mean([r.measures.rdmax for r in reports]),
        iqr=mean([r.measures.iqr for r in reports]),
        std=mean([r.measures.std for r in reports]),
        p_bubble=len(bubble_reports) / len(reports),
        time_to_form=_mean_or_none([r.shape.time_to_form for r in bubble_reports]),
        half_life=_mean_or_none([r.shape.half_life for r in bubble_reports]),
        spec=_mean_or_none([
            float(r.speculative) if r.speculative is not None else None
            for r in bubble_reports
        ]),
        bias=biased / total_agents if total_agents else 0.0,
        dispersion_error=mean([r.dispersion_error for r in reports]),
        common_error=mean([r.common_error for r in reports]),
        categories=categories,
    )
