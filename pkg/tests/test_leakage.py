"""Leakage scan, justification classifiers, and direct probes."""

import random

import pytest

from bubblelab.agents import AgentSpec
from bubblelab.leakage import (
    PROBE_QUESTIONS,
    JustificationLabel,
    classification_window,
    classify_justifications,
    default_keywords,
    keyword_scan,
    leakage_probe,
    parse_classifier_reply,
    validate_classifier,
)
from bubblelab.llm import LlmAgentConfig
from bubblelab.logio import ExperimentConfig
from bubblelab.market import MarketParams, RunLog, StepRecord
from bubblelab.orchestrator import run_market

PARAMS = MarketParams()


def synthetic_run(justifications_by_step, prices=None):
    """RunLog with two agents and hand-written justifications.

    ``justifications_by_step`` maps period -> (text_agent0, text_agent1).
    """
    if prices is None:
        T = max(justifications_by_step) if justifications_by_step else 3
        prices = [60.0] * max(T, 3)
    params = MarketParams(n_agents=2, horizon=len(prices))
    steps = []
    for t in range(1, params.horizon + 1):
        texts = justifications_by_step.get(t, ("", ""))
        steps.append(StepRecord(
            t=t,
            predictions=[60.0, 60.0],
            realized_price=prices[t - 1],
            prediction_errors=[0.0, 0.0],
            earnings=[1300.0, 1300.0],
            justifications=list(texts),
        ))
    return RunLog(
        params=params,
        agent_specs=[AgentSpec("naive"), AgentSpec("naive")],
        base_seed=0,
        repeat_index=0,
        initial_predictions=[(60.0, 60.0), (60.0, 60.0)],
        steps=steps,
    )


class TestKeywordScan:
    def test_named_reference_hit(self):
        run = synthetic_run({2: ("following Hommes (2008) lab results", "")})
        hits = keyword_scan(run)
        keywords = {h.keyword for h in hits}
        assert "Hommes" in keywords
        hommes = next(h for h in hits if h.keyword == "Hommes")
        assert hommes.agent == 0 and hommes.period == 2 and hommes.count == 1
        assert "Hommes" in hommes.snippet

    def test_benign_text_no_hits(self):
        run = synthetic_run({2: ("price trends upward", "momentum continues")})
        assert keyword_scan(run) == []

    def test_default_list_contents(self):
        keywords = default_keywords()
        assert "learning-to-forecast" in keywords
        assert "Hommes" in keywords
        assert len(keywords) == 29

    def test_whole_word_matching(self):
        run = synthetic_run({2: ("humanity will prosper", "")})
        assert all(h.keyword not in ("human", "humans") for h in keyword_scan(run))
        run2 = synthetic_run({2: ("as a human would", "")})
        assert any(h.keyword == "human" for h in keyword_scan(run2))

    def test_multiword_phrase(self):
        run = synthetic_run({3: ("classic learning to forecast design", "")})
        assert any(h.keyword == "learning to forecast" for h in keyword_scan(run))

    def test_case_insensitive_and_counted(self):
        run = synthetic_run({2: ("LABORATORY evidence from a laboratory", "")})
        hit = next(h for h in keyword_scan(run) if h.keyword == "laboratory")
        assert hit.count == 2

    def test_order_independence(self):
        texts = ["Hommes again", "nothing", "a laboratory study", "JEBO paper", ""]
        rng = random.Random(0)
        totals = set()
        for _ in range(5):
            shuffled = list(texts)
            rng.shuffle(shuffled)
            run = synthetic_run({t + 2: (shuffled[t], "") for t in range(len(shuffled))})
            totals.add(sum(h.count for h in keyword_scan(run)))
        assert len(totals) == 1

    def test_custom_keywords(self):
        run = synthetic_run({2: ("the weather is nice", "")})
        hits = keyword_scan(run, keywords=["weather"])
        assert len(hits) == 1 and hits[0].keyword == "weather"


class TestClassificationWindow:
    def test_no_bubble_window(self):
        run = synthetic_run({}, prices=[60.0] * 50)
        assert classification_window(run, "nonlinear") == list(range(4, 12))
        assert classification_window(run, "fundamental") == [1, 2, 3] + list(range(4, 12))

    def test_peak_caps_window(self):
        prices = [60.0, 80.0, 200.0, 400.0, 500.0, 600.0, 550.0, 300.0] + [60.0] * 42
        run = synthetic_run({}, prices=prices)
        # peak at t=6 -> nonlinear window is periods 4..5
        assert classification_window(run, "nonlinear") == [4, 5]

    def test_early_peak_empty_window(self):
        prices = [400.0, 500.0, 600.0, 400.0] + [59.0] * 46
        run = synthetic_run({}, prices=prices)
        assert classification_window(run, "nonlinear") == []

    def test_unknown_task_rejected(self):
        run = synthetic_run({})
        with pytest.raises(Exception):
            classification_window(run, "sentiment")


def classifier_config(server, model="judge"):
    return LlmAgentConfig(endpoint=server.url, model=model, max_retries=2,
                          backoff_base=0.01, timeout=5.0)


class TestClassifier:
    def test_parse_classifier_reply(self):
        value, reasoning = parse_classifier_reply(
            '{"reasoning": "exponential model", "Non-linear extrapolation": 1}', "nonlinear"
        )
        assert value == 1 and reasoning == "exponential model"
        value, _ = parse_classifier_reply('{"reasoning": "r", "Fundamental": "0"}', "fundamental")
        assert value == 0

    def test_parse_rejects_missing_key(self):
        with pytest.raises(Exception):
            parse_classifier_reply('{"reasoning": "r", "Verdict": 1}', "nonlinear")

    def test_nonlinear_pipeline_with_mock(self, mock_server):
        server = mock_server({
            "models": {"judge": {"raw": ['{"reasoning": "uses returns", "Non-linear extrapolation": 1}']}}
        })
        run = synthetic_run({
            4: ("growth is exponential, I model returns", "linear trend"),
            5: ("same again", ""),
        })
        result = classify_justifications(run, classifier_config(server), "nonlinear", run_id="r0")
        # three non-empty justifications inside the window
        assert result.labeled == 3
        assert result.excluded == 0
        assert result.proportion == 1.0
        assert all(l.task == "nonlinear" for l in result.labels)
        assert {(l.period, l.agent) for l in result.labels} == {(4, 0), (4, 1), (5, 0)}

    def test_fundamental_pipeline_includes_early_periods(self, mock_server):
        server = mock_server({
            "models": {"judge": {"raw": ['{"reasoning": "anchors to 60", "Fundamental": 1}']}}
        })
        run = synthetic_run({1: ("fair value is 3/0.05 = 60", "")})
        result = classify_justifications(run, classifier_config(server), "fundamental")
        assert result.labeled == 1
        assert result.labels[0].period == 1
        assert result.proportion == 1.0

    def test_unparseable_replies_excluded(self, mock_server):
        server = mock_server({"models": {"judge": {"raw": ["no verdict here"]}}})
        run = synthetic_run({4: ("something", "")})
        result = classify_justifications(run, classifier_config(server), "nonlinear")
        assert result.labeled == 0
        assert result.excluded == 1
        assert result.proportion is None

    def test_window_law_no_labels_outside(self, mock_server):
        server = mock_server({
            "models": {"judge": {"raw": ['{"reasoning": "r", "Non-linear extrapolation": 1}']}}
        })
        run = synthetic_run({2: ("early", ""), 4: ("in window", ""), 20: ("late", "")})
        result = classify_justifications(run, classifier_config(server), "nonlinear")
        assert {l.period for l in result.labels} == {4}


class TestLeakageProbe:
    def test_fifteen_records(self, mock_server):
        server = mock_server({
            "models": {"target": {"raw": ["This looks like a learning-to-forecast experiment."]}}
        })
        result = leakage_probe(classifier_config(server, model="target"), repeats=5)
        assert len(result.answers) == 15
        assert all(a.answer for a in result.answers)
        assert set(result.review) == {
            "experiment_identified", "result_identified", "bubble_height_identified"
        }
        assert all(v is None for v in result.review.values())

    def test_question_texts(self):
        assert "approximate maximum price of the bubbles" in PROBE_QUESTIONS[2]
        assert "main result" in PROBE_QUESTIONS[1]

    def test_instructions_attached(self, mock_server):
        server = mock_server({"models": {"target": {"raw": ["an experiment"]}}})
        leakage_probe(classifier_config(server, model="target"), repeats=1)
        for request in server.requests:
            content = request["messages"][0]["content"]
            assert "You are a financial advisor" in content

    def test_transport_errors_recorded(self):
        config = LlmAgentConfig(endpoint="http://127.0.0.1:9/", model="m",
                                max_retries=1, backoff_base=0.01, timeout=0.5)
        result = leakage_probe(config, repeats=1)
        assert len(result.answers) == 3
        assert all(a.error for a in result.answers)


def label(run_id, agent, period, task, value):
    return JustificationLabel(run_id=run_id, agent=agent, period=period, task=task, value=value)


class TestValidateClassifier:
    def test_identical_labelings(self):
        a = [label("r", 0, t, "nonlinear", t % 2) for t in range(4, 10)]
        b = [label("r", 0, t, "nonlinear", t % 2) for t in range(4, 10)]
        assert validate_classifier(a, b)["nonlinear"] == 1.0

    def test_hand_built_disagreement(self):
        values_a = [1, 1, 0, 0]
        values_b = [1, 0, 0, 1]
        a = [label("r", 0, t + 4, "fundamental", v) for t, v in enumerate(values_a)]
        b = [label("r", 0, t + 4, "fundamental", v) for t, v in enumerate(values_b)]
        assert validate_classifier(a, b)["fundamental"] == pytest.approx(0.0)

    def test_both_tasks_reported(self):
        a = [label("r", 0, 4, "nonlinear", 1), label("r", 0, 4, "fundamental", 0)]
        b = [label("r", 0, 4, "nonlinear", 1), label("r", 0, 4, "fundamental", 0)]
        kappas = validate_classifier(a, b)
        assert set(kappas) == {"nonlinear", "fundamental"}

    def test_unusable_labels_dropped(self):
        a = [label("r", 0, 4, "nonlinear", 1), label("r", 0, 5, "nonlinear", None)]
        b = [label("r", 0, 4, "nonlinear", 1), label("r", 0, 5, "nonlinear", 0)]
        assert validate_classifier(a, b)["nonlinear"] == 1.0
