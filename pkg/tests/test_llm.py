"""LLM layer: prompt construction, response parsing, transport, cap protocol."""

import json

import pytest

from bubblelab.agents import ForecastContext
from bubblelab.errors import ParseError, TransportError
from bubblelab.llm import (
    ChatClient,
    LlmAgentConfig,
    LlmForecaster,
    ParsedPrediction,
    parse_prediction,
)
from bubblelab.market import MarketParams
from bubblelab.prompts import (
    build_initial_prompt,
    build_step_prompt,
    build_system_prompt,
    cap_message,
    history_table,
)

PARAMS = MarketParams()

PROBE_PRICES = [53.65, 55.18, 57.52, 60.47, 63.49, 67.47]
PROBE_PREDICTIONS = [50.0, 50.0, 51.83, 56.71, 61.26, 64.69, 68.06]


def config_for(server, model="mock", **kwargs):
    kwargs.setdefault("max_retries", 3)
    kwargs.setdefault("backoff_base", 0.01)
    kwargs.setdefault("timeout", 5.0)
    return LlmAgentConfig(endpoint=server.url, model=model, **kwargs)


class TestParsePrediction:
    def test_plain_json(self):
        parsed = parse_prediction('{"reasoning": "anchor to dividend value", "predictedValue": 60.0}')
        assert parsed.predicted_value == 60.0
        assert parsed.reasoning == "anchor to dividend value"

    def test_numeric_string(self):
        parsed = parse_prediction('{"reasoning": "r", "predictedValue": "62.5"}')
        assert parsed.predicted_value == 62.5

    def test_fenced_block(self):
        text = 'Sure!\n```json\n{"reasoning": "r", "predictedValue": 61.0}\n```\n'
        assert parse_prediction(text).predicted_value == 61.0

    def test_thinking_preamble_stripped(self):
        text = '<think>maybe 80? no...</think>{"reasoning": "r", "predictedValue": 59.5}'
        assert parse_prediction(text).predicted_value == 59.5

    def test_last_object_wins(self):
        text = '{"reasoning": "draft", "predictedValue": 10} then {"reasoning": "final", "predictedValue": 70}'
        parsed = parse_prediction(text)
        assert parsed.predicted_value == 70
        assert parsed.reasoning == "final"

    def test_nested_object_not_split(self):
        text = '{"reasoning": "r", "predictedValue": 64, "meta": {"ignored": 1}}'
        assert parse_prediction(text).predicted_value == 64

    def test_missing_reasoning_rejected(self):
        with pytest.raises(ParseError):
            parse_prediction('thinking... done. {"predictedValue": 60}')

    def test_missing_value_rejected(self):
        with pytest.raises(ParseError) as err:
            parse_prediction('{"reasoning": "r"}')
        assert err.value.raw_text == '{"reasoning": "r"}'

    def test_no_json_rejected(self):
        with pytest.raises(ParseError):
            parse_prediction("sixty sounds right")

    def test_non_numeric_rejected(self):
        with pytest.raises(ParseError):
            parse_prediction('{"reasoning": "r", "predictedValue": "around sixty"}')

    def test_first_step_pair(self):
        text = '{"reasoning": "warmup", "predictedValue1": 50, "predictedValue2": 52}'
        parsed = parse_prediction(text, first_step=True)
        assert parsed.predicted_pair == (50.0, 52.0)

    def test_first_step_missing_member_rejected(self):
        with pytest.raises(ParseError):
            parse_prediction('{"reasoning": "r", "predictedValue1": 50}', first_step=True)

    def test_round_trip(self):
        original = ParsedPrediction("why not", 63.25, None, "")
        assert parse_prediction(original.serialize()).predicted_value == 63.25
        pair = ParsedPrediction("start", None, (49.5, 51.25), "")
        assert parse_prediction(pair.serialize(), first_step=True).predicted_pair == (49.5, 51.25)


class TestPrompts:
    def test_system_prompt_horizon_substituted(self):
        text = build_system_prompt(PARAMS, cap_known=False)
        assert "predict the stock market price during 50 subsequent time periods" in text
        assert "This process continues for 50 time periods" in text
        assert "average dividend payments are 3 guilder" in text
        assert "fixed interest rate of 5%" in text

    def test_system_prompt_other_horizon(self):
        text = build_system_prompt(MarketParams(horizon=40), cap_known=False)
        assert "during 40 subsequent time periods" in text

    def test_cap_note_appended_exactly_once(self):
        base = build_system_prompt(PARAMS, cap_known=False)
        capped = build_system_prompt(PARAMS, cap_known=True)
        assert capped.startswith(base)
        note = "less than or equal to 1000"
        assert note not in base
        assert capped.count(note) == 1

    def test_pure_function(self):
        assert build_system_prompt(PARAMS, True) == build_system_prompt(PARAMS, True)

    def test_initial_prompt(self):
        text = build_initial_prompt(PARAMS)
        assert "give an initial price prediction for the first two periods" in text
        assert "between 0 and 100" in text
        assert "predictedValue1" in text and "predictedValue2" in text

    def test_history_table_last_row(self):
        table = history_table(PROBE_PRICES, PROBE_PREDICTIONS)
        assert table.splitlines()[-1] == "| 7 | N/A | 68.06 |"
        assert "| 6 | 67.47 | 64.69 |" in table

    def test_step_prompt_two_step_ahead(self):
        text = build_step_prompt(2, [58.0], [50.0, 50.0], 1234.5, 1234.5)
        assert "Current time step: 2" in text
        assert "Make your prediction for what the price will be in time period 3" in text
        assert "Total earnings up to time 1: 1234.5" in text
        assert "Earnings at last time step: 1234.5" in text

    def test_step_prompt_full_history_regardless_of_memory(self):
        text = build_step_prompt(7, PROBE_PRICES, PROBE_PREDICTIONS, 6000.0, 1100.0)
        for period in range(1, 8):
            assert f"| {period} |" in text

    def test_nonlinear_variant(self):
        text = build_step_prompt(5, [60.0] * 4, [60.0] * 5, 0.0, 0.0, variant="nonlinear")
        assert "second and higher order trends" in text
        neutral = build_step_prompt(5, [60.0] * 4, [60.0] * 5, 0.0, 0.0)
        assert "second and higher order trends" not in neutral

    def test_first_step_has_no_step_prompt(self):
        with pytest.raises(ValueError):
            build_step_prompt(1, [], [50.0], 0.0, 0.0)

    def test_cap_message(self):
        text = cap_message(PARAMS)
        assert "Predictions above 1000 or below 0 are not accepted" in text


class TestChatClient:
    def test_basic_completion(self, mock_server):
        server = mock_server({"default": {"value": 60.0, "reasoning": "hold"}})
        client = ChatClient(config_for(server))
        content, body = client.complete([{"role": "user", "content": "hi"}], seed=42)
        assert json.loads(content)["predictedValue"] == 60.0
        assert body["seed"] == 42
        assert body["temperature"] == 1.0

    def test_reasoning_toggle_passthrough(self, mock_server):
        server = mock_server({"default": {"value": 60.0}})
        client = ChatClient(config_for(server, reasoning_toggle={"enable_thinking": False}))
        _, body = client.complete([{"role": "user", "content": "hi"}])
        assert body["enable_thinking"] is False

    def test_transport_error_after_retries(self):
        config = LlmAgentConfig(
            endpoint="http://127.0.0.1:9/unreachable", model="m",
            max_retries=2, backoff_base=0.01, timeout=0.5,
        )
        with pytest.raises(TransportError):
            ChatClient(config).complete([{"role": "user", "content": "hi"}])


def make_context(t, prices, own_predictions, last_e=1300.0, total_e=None):
    return ForecastContext(
        t=t, prices=prices, own_predictions=own_predictions,
        last_earnings=last_e,
        total_earnings=total_e if total_e is not None else last_e * (t - 1),
        cap_known=False,
    )


class TestLlmForecaster:
    def test_initial_then_steps(self, mock_server):
        server = mock_server({"default": {"value": 60.0, "reasoning": "steady"}})
        forecaster = LlmForecaster(config_for(server), PARAMS)
        pair, reasoning, flags = forecaster.initial_predictions(seed=1)
        assert pair == (60.0, 60.0)
        assert reasoning == "steady"
        assert flags == []
        value, _, _ = forecaster.predict(make_context(2, [60.0], [60.0, 60.0]), 2)
        assert value == 60.0

    def test_memory_window_law(self, mock_server):
        server = mock_server({"default": {"value": 60.0}})
        forecaster = LlmForecaster(config_for(server, memory=2), PARAMS)
        forecaster.initial_predictions(seed=1)
        prices, preds = [], [60.0, 60.0]
        for t in range(2, 7):
            prices.append(60.0)
            forecaster.predict(make_context(t, list(prices), list(preds)), t)
            preds.append(60.0)
        for request in server.requests:
            messages = request["messages"]
            assert messages[0]["role"] == "system"
            assert messages[-1]["role"] == "user"
        # request at step t carries exactly min(memory, t-1) prior exchanges
        for i, request in enumerate(server.requests):
            t = i + 1  # one request per step in this run
            middle = request["messages"][1:-1]
            assert len(middle) == 2 * min(2, t - 1)
            roles = [m["role"] for m in middle]
            assert roles == ["user", "assistant"] * (len(middle) // 2)

    def test_memory_zero_sends_no_exchanges(self, mock_server):
        server = mock_server({"default": {"value": 60.0}})
        forecaster = LlmForecaster(config_for(server, memory=0), PARAMS)
        forecaster.initial_predictions(seed=1)
        forecaster.predict(make_context(2, [60.0], [60.0, 60.0]), 2)
        assert all(len(r["messages"]) == 2 for r in server.requests)

    def test_cap_protocol(self, mock_server):
        server = mock_server({"models": {"capster": {"values": [1200, 980]}}})
        forecaster = LlmForecaster(config_for(server, model="capster"), PARAMS)
        pair, _, flags = forecaster.initial_predictions(seed=1)
        assert forecaster.cap_known
        assert "cap_discovered" in flags
        assert pair == (980.0, 980.0)
        # the re-query carried the cap note and the cap message
        second = server.requests[1]
        assert "less than or equal to 1000" in second["messages"][0]["content"]
        assert second["messages"][0]["content"].count("less than or equal to 1000") == 1
        assert "not accepted" in second["messages"][-1]["content"]
        # later system prompts keep carrying the note exactly once
        forecaster.predict(make_context(2, [940.0], [980.0, 980.0]), 2)
        later = server.requests[-1]["messages"][0]["content"]
        assert later.count("less than or equal to 1000") == 1

    def test_out_of_range_clamped_after_retries(self, mock_server):
        server = mock_server({"models": {"stubborn": {"values": [5000]}}})
        forecaster = LlmForecaster(config_for(server, model="stubborn", max_retries=2), PARAMS)
        value, _, flags = forecaster.predict(make_context(2, [60.0], [50.0, 50.0]), 2)
        assert value == 1000.0
        assert "protocol_violation" in flags
        assert forecaster.cap_known

    def test_negative_prediction_triggers_protocol(self, mock_server):
        server = mock_server({"models": {"bear": {"values": [-5, 10]}}})
        forecaster = LlmForecaster(config_for(server, model="bear"), PARAMS)
        value, _, flags = forecaster.predict(make_context(2, [60.0], [50.0, 50.0]), 2)
        assert value == 10.0
        assert "cap_discovered" in flags

    def test_parse_error_after_retries(self, mock_server):
        server = mock_server({"models": {"chaos": {"raw": ["not json at all"]}}})
        forecaster = LlmForecaster(config_for(server, model="chaos", max_retries=2), PARAMS)
        with pytest.raises(ParseError) as err:
            forecaster.predict(make_context(2, [60.0], [50.0, 50.0]), 2)
        assert "not json" in err.value.raw_text

    def test_transcripts_accumulate(self, mock_server):
        server = mock_server({"default": {"value": 60.0}})
        forecaster = LlmForecaster(config_for(server), PARAMS)
        forecaster.initial_predictions(seed=1)
        forecaster.predict(make_context(2, [60.0], [60.0, 60.0]), 2)
        assert len(forecaster.transcripts) == 2
        assert all({"t", "attempt", "request", "response"} <= set(e) for e in forecaster.transcripts)
