"""The market economy: equilibrium pricing, payoffs, and reference price paths.

Everything here is a pure function of its inputs. The economy is the
positive-feedback forecasting market: six advisors predict the next-period
price, and the realised price is an average of those predictions discounted
at the risk-free rate plus the mean dividend. Earnings reward forecast
accuracy quadratically and are capped at 1300 points per period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

from .errors import InvalidInputError, InvalidParamsError

if TYPE_CHECKING:  # pragma: no cover
    from .agents import AgentSpec

MAX_POINTS = 1300.0
POINTS_CURVATURE = 1300.0 / 49.0  # earnings hit zero at a forecast error of 7


@dataclass(frozen=True)
class MarketParams:
    """The economy's constants.

    r: risk-free interest rate per period.
    mean_dividend: mean dividend per period (guilders).
    cap: maximum accepted price prediction, disclosed only on violation.
    horizon: number of periods T.
    n_agents: number of forecasters H.
    guidance_range: interval agents are told prices will likely start in.
    """

    r: float = 0.05
    mean_dividend: float = 3.0
    cap: float = 1000.0
    horizon: int = 50
    n_agents: int = 6
    guidance_range: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self) -> None:
        if not (self.r > 0):
            raise InvalidParamsError(f"interest rate must be positive, got {self.r}")
        if self.mean_dividend < 0:
            raise InvalidParamsError(f"mean dividend must be >= 0, got {self.mean_dividend}")
        if not (self.cap > self.mean_dividend / self.r):
            raise InvalidParamsError(
                f"cap {self.cap} must exceed the fundamental price {self.mean_dividend / self.r}"
            )
        if self.horizon < 3:
            raise InvalidParamsError(f"horizon must be >= 3, got {self.horizon}")
        if self.n_agents < 1:
            raise InvalidParamsError(f"need at least one agent, got {self.n_agents}")
        lo, hi = self.guidance_range
        if not (lo < hi):
            raise InvalidParamsError(f"guidance range must be increasing, got {self.guidance_range}")

    @property
    def growth_factor(self) -> float:
        """R = 1 + r."""
        return 1.0 + self.r

    @property
    def fundamental(self) -> float:
        return self.mean_dividend / self.r


def fundamental_price(params: MarketParams) -> float:
    """Present value of the expected dividend stream: mean_dividend / r."""
    if params.r <= 0:
        raise InvalidParamsError("interest rate must be positive")
    return params.mean_dividend / params.r


def realized_price(predictions_for_next: Sequence[float], params: MarketParams) -> float:
    """Market-clearing price from all agents' next-period predictions.

    p_t = (mean(predictions) + mean_dividend) / (1 + r).

    Predictions must be finite and non-negative. Values above the cap are
    accepted here: the cap is a property of the prediction protocol (agents
    that try to exceed it get told off), not of the pricing equation, and the
    rational-expectations reference path prices its last in-cap period from a
    prediction slightly above the cap.
    """
    if len(predictions_for_next) == 0:
        raise InvalidInputError("need at least one prediction")
    for p in predictions_for_next:
        if not math.isfinite(p):
            raise InvalidInputError(f"prediction {p!r} is not finite")
        if p < 0:
            raise InvalidInputError(f"prediction {p} is negative")
    mean_pred = sum(predictions_for_next) / len(predictions_for_next)
    return (1.0 / (1.0 + params.r)) * (mean_pred + params.mean_dividend)


def earnings(prediction: float, realized: float) -> float:
    """Per-period payoff: max(1300 - (1300/49) * error^2, 0).

    Continuous value; the rounded table shown to participants is generated
    from this curve but never used for payoff computation.
    """
    if not (math.isfinite(prediction) and math.isfinite(realized)):
        raise InvalidInputError("prediction and realized price must be finite")
    err = realized - prediction
    return max(MAX_POINTS - POINTS_CURVATURE * err * err, 0.0)


def re_trajectory(c: float, params: MarketParams) -> list[float]:
    """Rational-expectations price path p_t = p^f + c * R^t, collapsing at the cap.

    Periods are 1-based. Every period whose bubble value exceeds the cap
    (and all later periods) realises the fundamental price instead: once the
    cap is known, the no-bubble condition holds and the bubble solution dies.
    c = 0 gives the constant fundamental solution.
    """
    if c < 0:
        raise InvalidInputError(f"bubble constant must be >= 0, got {c}")
    pf = fundamental_price(params)
    R = params.growth_factor
    out: list[float] = []
    collapsed = False
    for t in range(1, params.horizon + 1):
        v = pf + c * R**t
        if collapsed or v > params.cap:
            collapsed = True
            out.append(pf)
        else:
            out.append(v)
    return out


@dataclass
class StepRecord:
    """One period of a run.

    ``predictions`` are the H predictions for period t+1 (collected at step t);
    ``prediction_errors`` and ``earnings`` score the predictions for period t
    (made at step t-1, or in the initial pair for t = 1) against the realised
    price p_t.
    """

    t: int
    predictions: list[float]
    realized_price: float
    prediction_errors: list[float]
    earnings: list[float]
    justifications: list[str]
    flags: list[str] = field(default_factory=list)


@dataclass
class RunLog:
    """Complete record of one experiment run."""

    params: MarketParams
    agent_specs: list["AgentSpec"]
    base_seed: int
    repeat_index: int
    initial_predictions: list[tuple[float, float]]
    steps: list[StepRecord] = field(default_factory=list)
    transcripts: list[dict] = field(default_factory=list)
    cap_discovered: dict[int, int] = field(default_factory=dict)
    initial_justifications: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    incomplete: bool = False
    error: Optional[str] = None

    @property
    def prices(self) -> list[float]:
        return [s.realized_price for s in self.steps]

    def predictions_for_period(self, t: int) -> list[float]:
        """Per-agent predictions for period t (1-based), wherever they were made.

        t = 1 comes from the initial pair's first member; t >= 2 comes from the
        step t-1 record (the pair's second member equals step 1's predictions).
        """
        if t == 1:
            return [pair[0] for pair in self.initial_predictions]
        return list(self.steps[t - 2].predictions)

    def prediction_matrix(self) -> list[list[float]]:
        """predictions[h][t-1] = agent h's prediction for period t, t = 1..T."""
        T = len(self.steps)
        n = len(self.initial_predictions)
        return [[self.predictions_for_period(t)[h] for t in range(1, T + 1)] for h in range(n)]
