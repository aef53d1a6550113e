"""LLM-backed forecaster: chat transport, response parsing, cap protocol.

Speaks to any chat-completions-style HTTP JSON endpoint: the request carries
``model``, ``temperature``, optional ``seed`` and a ``messages`` list of
{role, content}; the reply's first choice carries ``message.content``.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import prompts
from .errors import InvalidParamsError, ParseError, TransportError
from .market import MarketParams

import requests


@dataclass
class LlmAgentConfig:
    """How to query one LLM forecaster."""

    endpoint: str
    model: str
    temperature: float = 1.0
    seed: Optional[int] = None
    memory: int = 2
    prompt_variant: str = "neutral"
    reasoning_toggle: Optional[dict] = None  # opaque fields merged into the request
    max_retries: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.25
    api_key_env: Optional[str] = None

    def __post_init__(self) -> None:
        if self.memory < 0:
            raise InvalidParamsError("memory must be >= 0")
        if self.temperature < 0:
            raise InvalidParamsError("temperature must be >= 0")
        if self.max_retries < 1:
            raise InvalidParamsError("max_retries must be >= 1")
        if self.prompt_variant not in ("neutral", "nonlinear"):
            raise InvalidParamsError(f"unknown prompt variant {self.prompt_variant!r}")


@dataclass
class ParsedPrediction:
    """A structured prediction extracted from a raw model reply."""

    reasoning: str
    predicted_value: Optional[float]
    predicted_pair: Optional[tuple[float, float]]
    raw_text: str

    def serialize(self) -> str:
        if self.predicted_pair is not None:
            return json.dumps({
                "reasoning": self.reasoning,
                "predictedValue1": self.predicted_pair[0],
                "predictedValue2": self.predicted_pair[1],
            })
        return json.dumps({"reasoning": self.reasoning, "predictedValue": self.predicted_value})


_THINK_BLOCK = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)
_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def _json_objects(text: str) -> list[dict]:
    """All non-overlapping JSON objects in text, left to right."""
    decoder = json.JSONDecoder()
    out: list[dict] = []
    i = 0
    while i < len(text):
        start = text.find("{", i)
        if start == -1:
            break
        try:
            obj, end = decoder.raw_decode(text, start)
        except ValueError:
            i = start + 1
            continue
        if isinstance(obj, dict):
            out.append(obj)
        i = end
    return out


def json_candidates(text: str) -> list[dict]:
    """JSON objects in a model reply, after stripping thinking blocks and
    preferring fenced code-block contents; left-to-right order."""
    cleaned = _THINK_BLOCK.sub(" ", text)
    fenced = _FENCE.findall(cleaned)
    candidates = _json_objects("\n".join(fenced)) if fenced else []
    candidates += _json_objects(_FENCE.sub(" ", cleaned))
    return candidates


def _coerce_number(value: object, key: str, raw: str) -> float:
    if isinstance(value, bool) or value is None:
        raise ParseError(f"key {key!r} is not numeric", raw)
    if isinstance(value, (int, float)):
        num = float(value)
    elif isinstance(value, str):
        try:
            num = float(value.strip())
        except ValueError:
            raise ParseError(f"key {key!r} is not numeric: {value!r}", raw) from None
    else:
        raise ParseError(f"key {key!r} is not numeric", raw)
    if not math.isfinite(num):
        raise ParseError(f"key {key!r} is not finite", raw)
    return num


def parse_prediction(text: str, first_step: bool = False) -> ParsedPrediction:
    """Extract the prediction JSON from a raw reply.

    Strips thinking blocks and code fences, takes the last syntactically
    valid JSON object, and requires 'reasoning' plus 'predictedValue' (or
    'predictedValue1'/'predictedValue2' on the first step). Numeric strings
    are accepted.
    """
    candidates = json_candidates(text)
    if not candidates:
        raise ParseError("no JSON object found in reply", text)
    obj = candidates[-1]
    if "reasoning" not in obj:
        raise ParseError("reply JSON lacks a 'reasoning' key", text)
    reasoning = str(obj["reasoning"])
    if first_step:
        if "predictedValue1" not in obj or "predictedValue2" not in obj:
            raise ParseError("first-step reply needs predictedValue1 and predictedValue2", text)
        pair = (
            _coerce_number(obj["predictedValue1"], "predictedValue1", text),
            _coerce_number(obj["predictedValue2"], "predictedValue2", text),
        )
        return ParsedPrediction(reasoning, None, pair, text)
    if "predictedValue" not in obj:
        raise ParseError("reply JSON lacks a 'predictedValue' key", text)
    value = _coerce_number(obj["predictedValue"], "predictedValue", text)
    return ParsedPrediction(reasoning, value, None, text)


class ChatClient:
    """Thin HTTP client with bounded exponential-backoff retries.

    Safe for concurrent use; holds no per-conversation state.
    """

    def __init__(self, config: LlmAgentConfig, session: Optional[requests.Session] = None):
        self.config = config
        self._session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: Sequence[dict], seed: Optional[int] = None) -> tuple[str, dict]:
        """POST one chat request; returns (reply content, request body)."""
        body: dict = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": list(messages),
        }
        request_seed = seed if seed is not None else self.config.seed
        if request_seed is not None:
            body["seed"] = request_seed
        if self.config.reasoning_toggle:
            body.update(self.config.reasoning_toggle)
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            try:
                resp = self._session.post(
                    self.config.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
                resp.raise_for_status()
                payload = resp.json()
                content = payload["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise TransportError("endpoint returned non-text content")
                return content, body
            except (requests.RequestException, KeyError, IndexError, TypeError,
                    ValueError, TransportError) as exc:
                last_error = exc
                if attempt + 1 < self.config.max_retries:
                    time.sleep(self.config.backoff_base * 2**attempt)
        raise TransportError(f"chat endpoint failed after {self.config.max_retries} attempts: {last_error}")


def _window(exchanges: list[tuple[str, str]], memory: int) -> list[dict]:
    messages: list[dict] = []
    for user, assistant in exchanges[len(exchanges) - memory:] if memory > 0 else []:
        messages.append({"role": "user", "content": user})
        messages.append({"role": "assistant", "content": assistant})
    return messages


class LlmForecaster:
    """Stateful forecaster for one agent across a run.

    Keeps the conversational exchanges for memory windowing, the cap_known
    flag, and a transcript of every request/response round.
    """

    def __init__(self, config: LlmAgentConfig, params: MarketParams,
                 client: Optional[ChatClient] = None):
        self.config = config
        self.params = params
        self.client = client or ChatClient(config)
        self.exchanges: list[tuple[str, str]] = []  # (user prompt, assistant reply)
        self.cap_known = False
        self.transcripts: list[dict] = []

    # -- internals ----------------------------------------------------------

    def _messages(self, user_prompt: str) -> list[dict]:
        system = prompts.build_system_prompt(self.params, self.cap_known)
        msgs = [{"role": "system", "content": system}]
        msgs += _window(self.exchanges, self.config.memory)
        msgs.append({"role": "user", "content": user_prompt})
        return msgs

    def _in_range(self, value: float) -> bool:
        return 0.0 <= value <= self.params.cap

    def _record(self, t: int, attempt: int, request: dict, response: str) -> None:
        self.transcripts.append({
            "t": t,
            "attempt": attempt,
            "request": request,
            "response": response,
        })

    def _parse_with_retries(self, t: int, messages: list[dict], seed: Optional[int],
                            first_step: bool) -> tuple[ParsedPrediction, int]:
        """Query until the reply parses; returns (parsed, attempts used)."""
        last: Optional[ParseError] = None
        for attempt in range(self.config.max_retries):
            content, body = self.client.complete(messages, seed=seed)
            self._record(t, attempt, body, content)
            try:
                return parse_prediction(content, first_step=first_step), attempt + 1
            except ParseError as exc:
                last = exc
        assert last is not None
        raise last

    def _query(self, t: int, user_prompt: str, seed: Optional[int],
               first_step: bool) -> tuple[ParsedPrediction, list[str]]:
        """One forecasting step, including the out-of-range cap protocol."""
        flags: list[str] = []
        messages = self._messages(user_prompt)
        parsed, _ = self._parse_with_retries(t, messages, seed, first_step)
        rounds = 0
        while not self._values_in_range(parsed) and rounds < self.config.max_retries:
            rounds += 1
            if not self.cap_known:
                self.cap_known = True
                flags.append("cap_discovered")
            # rebuild with the cap note in the system prompt, show the agent its
            # rejected answer, and deliver the cap message
            messages = self._messages(user_prompt)
            messages.append({"role": "assistant", "content": parsed.raw_text})
            messages.append({"role": "user", "content": prompts.cap_message(self.params)})
            parsed, _ = self._parse_with_retries(t, messages, seed, first_step)
        if not self._values_in_range(parsed):
            flags.append("protocol_violation")
            parsed = self._clamped(parsed)
        self.exchanges.append((user_prompt, parsed.raw_text))
        return parsed, flags

    def _values_in_range(self, parsed: ParsedPrediction) -> bool:
        if parsed.predicted_pair is not None:
            return all(self._in_range(v) for v in parsed.predicted_pair)
        assert parsed.predicted_value is not None
        return self._in_range(parsed.predicted_value)

    def _clamped(self, parsed: ParsedPrediction) -> ParsedPrediction:
        clamp = lambda v: min(max(v, 0.0), self.params.cap)  # noqa: E731
        if parsed.predicted_pair is not None:
            pair = (clamp(parsed.predicted_pair[0]), clamp(parsed.predicted_pair[1]))
            return ParsedPrediction(parsed.reasoning, None, pair, parsed.raw_text)
        return ParsedPrediction(parsed.reasoning, clamp(parsed.predicted_value), None, parsed.raw_text)

    # -- public -------------------------------------------------------------

    def initial_predictions(self, seed: Optional[int] = None) -> tuple[tuple[float, float], str, list[str]]:
        prompt = prompts.build_initial_prompt(self.params)
        parsed, flags = self._query(1, prompt, seed, first_step=True)
        assert parsed.predicted_pair is not None
        return parsed.predicted_pair, parsed.reasoning, flags

    def predict(self, ctx, request_seed: Optional[int] = None) -> tuple[float, str, list[str]]:
        prompt = prompts.build_step_prompt(
            ctx.t, ctx.prices, ctx.own_predictions,
            ctx.total_earnings, ctx.last_earnings,
            variant=self.config.prompt_variant,
        )
        parsed, flags = self._query(ctx.t, prompt, request_seed, first_step=False)
        assert parsed.predicted_value is not None
        return parsed.predicted_value, parsed.reasoning, flags
