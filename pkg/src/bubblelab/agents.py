"""Scripted forecasting agents: deterministic reference and heuristic rules.

Kinds:
  * fundamentalist      -- always predicts the fundamental price.
  * naive               -- repeats the last realised price.
  * trend(lambda)       -- linear extrapolation of the last price change.
  * adaptive(w)         -- blend of last price and own last prediction.
  * rational_bubble(c)  -- the rational-expectations bubble solution
                           p^f + c R^t, switching to p^f once the bubble
                           path would exceed the prediction cap.
  * llm(config)         -- handled by the llm module, declared here so one
                           spec type covers a whole market.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidParamsError
from .llm import LlmAgentConfig
from .market import MarketParams, fundamental_price

SCRIPTED_KINDS = ("fundamentalist", "naive", "trend", "adaptive", "rational_bubble")
ALL_KINDS = SCRIPTED_KINDS + ("llm",)


@dataclass
class ForecastContext:
    """Everything an agent may see at step t (before p_t is revealed).

    ``prices`` holds p_1 .. p_{t-1}; ``own_predictions`` holds the agent's own
    predictions p^e_1 .. p^e_t (the prediction for period t was made at t-1).
    """

    t: int
    prices: list[float]
    own_predictions: list[float]
    last_earnings: float
    total_earnings: float
    cap_known: bool
    guidance_range: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self) -> None:
        if len(self.prices) != self.t - 1:
            raise InvalidParamsError(
                f"context at t={self.t} must carry {self.t - 1} prices, got {len(self.prices)}"
            )
        if len(self.own_predictions) != self.t:
            raise InvalidParamsError(
                f"context at t={self.t} must carry {self.t} own predictions, "
                f"got {len(self.own_predictions)}"
            )


@dataclass
class AgentSpec:
    """Declarative description of one forecaster."""

    kind: str
    trend_weight: float = 1.0
    adapt_weight: float = 0.5
    bubble_constant: float = 0.0
    llm: Optional[LlmAgentConfig] = None
    seed: int = 0
    initial_policy: str = "fixed"  # "fixed" or "uniform"
    initial_pair: tuple[float, float] = (50.0, 50.0)
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise InvalidParamsError(f"unknown agent kind {self.kind!r}")
        if self.trend_weight < 0:
            raise InvalidParamsError("trend weight must be >= 0")
        if not (0.0 <= self.adapt_weight <= 1.0):
            raise InvalidParamsError("adaptive weight must lie in [0, 1]")
        if self.bubble_constant < 0:
            raise InvalidParamsError("bubble constant must be >= 0")
        if self.initial_policy not in ("fixed", "uniform"):
            raise InvalidParamsError(f"unknown initial policy {self.initial_policy!r}")
        if self.kind == "llm" and self.llm is None:
            raise InvalidParamsError("llm agents need an LlmAgentConfig")


def mix_seed(*parts: int) -> int:
    """Stable seed mixing for (base_seed, repeat, agent, t) tuples.

    Hash-based so the stream is identical across platforms and Python builds.
    """
    key = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") & 0x7FFFFFFF


def initial_pair(spec: AgentSpec, params: MarketParams, rng_seed: int) -> tuple[float, float]:
    """The (p^e_1, p^e_2) pair an agent submits at the first step."""
    if spec.kind == "rational_bubble":
        pf = fundamental_price(params)
        R = params.growth_factor
        return (pf + spec.bubble_constant * R, pf + spec.bubble_constant * R**2)
    if spec.kind == "fundamentalist":
        pf = fundamental_price(params)
        return (pf, pf)
    if spec.initial_policy == "uniform":
        rng = random.Random(rng_seed)
        lo, hi = params.guidance_range
        return (rng.uniform(lo, hi), rng.uniform(lo, hi))
    return spec.initial_pair


def _rule_value(spec: AgentSpec, ctx: ForecastContext, params: MarketParams) -> float:
    """Unclamped prediction for period t+1 under the spec's rule."""
    pf = fundamental_price(params)
    if spec.kind == "rational_bubble":
        R = params.growth_factor
        # Emits the uncapped REH value while the current-period bubble path is
        # still below the cap; this is what prices the last in-cap period of
        # the reference trajectory through the market equation.
        if pf + spec.bubble_constant * R**ctx.t <= params.cap:
            return pf + spec.bubble_constant * R ** (ctx.t + 1)
        return pf
    if spec.kind == "fundamentalist":
        return pf
    kind = spec.kind
    # fallback chain: trend/adaptive need history that t < 3 lacks
    if kind in ("trend", "adaptive") and ctx.t < 3:
        kind = "naive"
    if kind == "naive":
        if ctx.t < 2:
            return ctx.own_predictions[-1]
        return ctx.prices[-1]
    if kind == "trend":
        return ctx.prices[-1] + spec.trend_weight * (ctx.prices[-1] - ctx.prices[-2])
    if kind == "adaptive":
        return spec.adapt_weight * ctx.prices[-1] + (1.0 - spec.adapt_weight) * ctx.own_predictions[-1]
    raise InvalidParamsError(f"cannot forecast for kind {spec.kind!r}")


def forecast(spec: AgentSpec, ctx: ForecastContext, params: MarketParams) -> float:
    """Prediction for period t+1 from a scripted agent at step t.

    Heuristic outputs are clamped to [0, cap]. The rational_bubble reference
    agent already encodes the cap in its rule and is passed through unclamped
    (its boundary-step prediction intentionally overshoots the cap).
    """
    if spec.kind == "llm":
        raise InvalidParamsError("llm agents are queried through the llm module")
    raw = _rule_value(spec, ctx, params)
    if spec.kind == "rational_bubble":
        return raw
    return min(max(raw, 0.0), params.cap)


@dataclass
class ScriptedAgent:
    """Stateful wrapper used by the orchestrator.

    Tracks whether this agent has hit the prediction cap (cap_known), so the
    information set mirrors what a participant would have learned.
    """

    spec: AgentSpec
    params: MarketParams
    seed: int = 0
    cap_known: bool = False

    def initial_predictions(self) -> tuple[tuple[float, float], str]:
        return initial_pair(self.spec, self.params, self.seed), ""

    def predict(self, ctx: ForecastContext, request_seed: int) -> tuple[float, str, list[str]]:
        raw = _rule_value(self.spec, ctx, self.params)
        flags: list[str] = []
        if self.spec.kind == "rational_bubble":
            if raw > self.params.cap and not self.cap_known:
                self.cap_known = True
                flags.append("cap_boundary")
            return raw, "", flags
        value = min(max(raw, 0.0), self.params.cap)
        if value != raw and not self.cap_known:
            self.cap_known = True
            flags.append("clamped")
        elif value != raw:
            flags.append("clamped")
        return value, "", flags
