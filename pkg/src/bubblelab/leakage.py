"""Data-leakage detection and LLM-based justification classification.

Leakage checks: a whole-word keyword scan over prediction justifications,
and direct probe questions asking a model to identify the experiment from
its instructions alone. Classification: an LLM judge labels justifications
as using non-linear extrapolation and/or anchoring to a fundamental value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import prompts
from .analytics import bubble_shape
from .errors import BubbleLabError, InvalidInputError
from .llm import ChatClient, LlmAgentConfig, json_candidates, _coerce_number
from .market import MarketParams, RunLog, fundamental_price
from .stats import cohen_kappa

CLASSIFIER_TASKS = ("nonlinear", "fundamental")
NONLINEAR_WINDOW_CUTOFF = 12  # window runs from period 4 up to min(first peak, 12), exclusive


def default_keywords() -> list[str]:
    """The shipped leakage keyword/phrase list, one entry per line."""
    text = resources.files("bubblelab").joinpath("data/keywords.txt").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_keywords(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


@dataclass
class KeywordHit:
    keyword: str
    agent: int
    period: int
    count: int
    snippet: str


def _keyword_pattern(keyword: str) -> re.Pattern:
    # whole-word, case-insensitive; multi-word phrases match literally with
    # flexible internal whitespace ("human" must not fire inside "humanity")
    parts = [re.escape(w) for w in keyword.split()]
    body = r"\s+".join(parts)
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def _iter_justifications(run: RunLog):
    for step in run.steps:
        for agent, text in enumerate(step.justifications):
            yield agent, step.t, text


def keyword_scan(run: RunLog, keywords: Optional[Sequence[str]] = None) -> list[KeywordHit]:
    """Whole-word, case-insensitive scan over every justification in a run."""
    if keywords is None:
        keywords = default_keywords()
    patterns = [(kw, _keyword_pattern(kw)) for kw in keywords]
    hits: list[KeywordHit] = []
    for agent, period, text in _iter_justifications(run):
        if not text:
            continue
        for kw, pattern in patterns:
            matches = list(pattern.finditer(text))
            if not matches:
                continue
            first = matches[0]
            lo = max(0, first.start() - 40)
            hi = min(len(text), first.end() + 40)
            hits.append(KeywordHit(
                keyword=kw, agent=agent, period=period,
                count=len(matches), snippet=text[lo:hi],
            ))
    return hits


# ---------------------------------------------------------------------------
# Justification classifiers
# ---------------------------------------------------------------------------

NONLINEAR_CLASSIFIER_PROMPT = """Analyse the following response from an agent trying to predict the price of an asset in a market experiment. Identify if the agent is clearly and explicitly using non-linear extrapolation to make their prediction, and explain your reasoning.  Some examples of non-linear reasoning are:

- Uses a quadratic or higher order polynomial
- Uses an exponential model
- Reasons about the returns of the price, or percentage change in price, rather than about absolute price changes
- Reasons about the rate of change of the differences in prices.

Your response should be in exclusively in JSON format, with the structure below:

{"reasoning": "your reasoning here", "Non-linear extrapolation": 1 if non-linear extrapolation is used, 0 otherwise}

Here is the text to analyse:

"""

FUNDAMENTAL_CLASSIFIER_PROMPT = """Analyse the following response from an agent trying to predict the price of an asset in a market experiment. Identify if the agent is clearly and explicitly anchoring their prediction around what they consider is a fundamental asset price.  This fundamental price can be calculated in any way, such as dividend discounting or any other method. For reference, the correct fundamental price in this experiment is {fundamental} but the agent could be anchoring to a different, incorrect, fundamental value.

Your response should be in exclusively in JSON format, with the structure below:

{{"reasoning": "your reasoning here", "Fundamental": 1 if fundamental price is used, 0 otherwise}}

Here is the text to analyse:

"""

_TASK_KEYS = {"nonlinear": "Non-linear extrapolation", "fundamental": "Fundamental"}


@dataclass
class JustificationLabel:
    run_id: str
    agent: int
    period: int
    task: str
    value: Optional[int]  # None when the classifier reply was unusable
    reasoning: str = ""


@dataclass
class ClassificationResult:
    labels: list[JustificationLabel]
    proportion: Optional[float]
    labeled: int
    excluded: int
    flags: list[str] = field(default_factory=list)


def classification_window(run: RunLog, task: str) -> list[int]:
    """Periods whose justifications get classified for a task.

    Non-linear: after period 3 and strictly before min(first bubble peak, 12),
    so cap effects and unequal window lengths do not distort comparisons.
    Fundamental: the same window plus periods 1-3.
    """
    if task not in CLASSIFIER_TASKS:
        raise InvalidInputError(f"unknown classifier task {task!r}")
    p_f = fundamental_price(run.params)
    shape = bubble_shape(run.prices, p_f)
    cutoff = min(shape.peak, NONLINEAR_WINDOW_CUTOFF) if shape.detected else NONLINEAR_WINDOW_CUTOFF
    window = [t for t in range(4, cutoff)]
    if task == "fundamental":
        window = [1, 2, 3] + window
    return window


def _classifier_prompt(task: str, justification: str, p_f: float) -> str:
    if task == "nonlinear":
        return NONLINEAR_CLASSIFIER_PROMPT + justification
    return FUNDAMENTAL_CLASSIFIER_PROMPT.format(fundamental=f"{p_f:g}") + justification


def parse_classifier_reply(text: str, task: str) -> tuple[int, str]:
    """Extract the 0/1 verdict using the same JSON-extraction rules as
    prediction parsing (fences and thinking stripped, last valid object)."""
    key = _TASK_KEYS[task]
    for obj in reversed(json_candidates(text)):
        if key in obj:
            value = int(_coerce_number(obj[key], key, text))
            if value not in (0, 1):
                raise InvalidInputError(f"classifier verdict {value} is not 0/1")
            return value, str(obj.get("reasoning", ""))
    raise InvalidInputError(f"classifier reply lacks key {key!r}")


def classify_justifications(
    run: RunLog,
    classifier: LlmAgentConfig,
    task: str,
    run_id: str = "",
    client: Optional[ChatClient] = None,
) -> ClassificationResult:
    """Label each in-window justification; proportion over usable labels."""
    window = classification_window(run, task)
    p_f = fundamental_price(run.params)
    client = client or ChatClient(classifier)
    labels: list[JustificationLabel] = []
    flags: list[str] = []
    if not window:
        flags.append("empty_window")
    for step in run.steps:
        if step.t not in window:
            continue
        for agent, justification in enumerate(step.justifications):
            if not justification:
                continue
            value: Optional[int] = None
            reasoning = ""
            messages = [{"role": "user", "content": _classifier_prompt(task, justification, p_f)}]
            try:
                for _ in range(classifier.max_retries):
                    reply, _body = client.complete(messages)
                    try:
                        value, reasoning = parse_classifier_reply(reply, task)
                        break
                    except (InvalidInputError, BubbleLabError):
                        continue
            except BubbleLabError as exc:
                flags.append(f"agent{agent}@{step.t}: {exc}")
            labels.append(JustificationLabel(
                run_id=run_id, agent=agent, period=step.t,
                task=task, value=value, reasoning=reasoning,
            ))
    usable = [l for l in labels if l.value is not None]
    excluded = len(labels) - len(usable)
    proportion = sum(l.value for l in usable) / len(usable) if usable else None
    return ClassificationResult(
        labels=labels, proportion=proportion,
        labeled=len(usable), excluded=excluded, flags=flags,
    )


# ---------------------------------------------------------------------------
# Direct leakage probes
# ---------------------------------------------------------------------------

PROBE_QUESTIONS = (
    "Which experiment do you think the below instructions are most likely from?",
    "The following instructions are from an experiment, what do you think is the main result of this experiment?",
    "The following instructions are from an experiment in which price bubbles form. "
    "What do you think is the approximate maximum price of the bubbles?",
)


@dataclass
class ProbeAnswer:
    question_index: int
    repeat: int
    question: str
    answer: Optional[str]
    error: Optional[str] = None


@dataclass
class LeakageProbeResult:
    answers: list[ProbeAnswer]
    # manual-review slots: graded by a human, never auto-judged
    review: dict = field(default_factory=lambda: {
        "experiment_identified": None,
        "result_identified": None,
        "bubble_height_identified": None,
    })


def leakage_probe(
    target: LlmAgentConfig,
    params: Optional[MarketParams] = None,
    repeats: int = 5,
    client: Optional[ChatClient] = None,
) -> LeakageProbeResult:
    """Ask the three identification questions, each followed by the
    experiment instructions, ``repeats`` times each."""
    params = params or MarketParams()
    instructions = prompts.build_system_prompt(params, cap_known=False)
    client = client or ChatClient(target)
    answers: list[ProbeAnswer] = []
    for qi, question in enumerate(PROBE_QUESTIONS):
        content = f"{question}\n\n{instructions}"
        for repeat in range(repeats):
            try:
                reply, _body = client.complete([{"role": "user", "content": content}])
                answers.append(ProbeAnswer(qi, repeat, question, reply))
            except BubbleLabError as exc:
                answers.append(ProbeAnswer(qi, repeat, question, None, error=str(exc)))
    return LeakageProbeResult(answers=answers)


def validate_classifier(
    labels_a: Sequence[JustificationLabel],
    labels_b: Sequence[JustificationLabel],
) -> dict[str, float]:
    """Cohen's kappa between two raters' labels, per task.

    Aligns records on (run, agent, period, task); unusable labels drop the
    pair from both sides.
    """
    index_b = {(l.run_id, l.agent, l.period, l.task): l for l in labels_b}
    per_task: dict[str, tuple[list[int], list[int]]] = {t: ([], []) for t in CLASSIFIER_TASKS}
    for la in labels_a:
        lb = index_b.get((la.run_id, la.agent, la.period, la.task))
        if lb is None or la.value is None or lb.value is None:
            continue
        per_task[la.task][0].append(la.value)
        per_task[la.task][1].append(lb.value)
    out: dict[str, float] = {}
    for task, (a, b) in per_task.items():
        if a:
            out[task] = cohen_kappa(a, b)
    return out
