"""Runs complete experiments: the per-period loop, campaigns, and probes.

Each period is simultaneous-move: every agent is given a context built only
from information available before the period's price, predictions may be
collected concurrently, and results are committed in fixed agent order. The
price for period t comes from all agents' period-t+1 predictions; earnings
for period t score the period-t predictions made one step earlier.
"""

from __future__ import annotations

import dataclasses
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from .agents import AgentSpec, ForecastContext, ScriptedAgent, initial_pair, mix_seed
from .errors import BubbleLabError, InvalidParamsError
from .llm import LlmAgentConfig, LlmForecaster
from .logio import ExperimentConfig, RunLogWriter
from .market import MarketParams, RunLog, StepRecord, earnings, realized_price
from .mockserver import MockChatServer, load_script

MOCK_SCHEME = "mock://"


class MockEndpointPool:
    """Lazily starts one mock server per ``mock://<script-path>`` endpoint.

    Safe to share across concurrently running repeats.
    """

    def __init__(self) -> None:
        self._servers: dict[str, MockChatServer] = {}
        self._lock = threading.Lock()

    def resolve(self, endpoint: str) -> str:
        if not endpoint.startswith(MOCK_SCHEME):
            return endpoint
        script_path = endpoint[len(MOCK_SCHEME):]
        with self._lock:
            if script_path not in self._servers:
                server = MockChatServer(load_script(script_path)).start()
                self._servers[script_path] = server
            return self._servers[script_path].url

    def close(self) -> None:
        with self._lock:
            for server in self._servers.values():
                server.stop()
            self._servers.clear()

    def __enter__(self) -> "MockEndpointPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _build_agent(spec: AgentSpec, params: MarketParams, base_seed: int,
                 repeat_index: int, index: int, pool: Optional[MockEndpointPool]):
    if spec.kind == "llm":
        config = spec.llm
        if pool is not None and config.endpoint.startswith(MOCK_SCHEME):
            config = dataclasses.replace(config, endpoint=pool.resolve(config.endpoint))
        return LlmForecaster(config, params)
    draw_seed = mix_seed(base_seed, repeat_index, index, spec.seed)
    return ScriptedAgent(spec, params, seed=draw_seed)


@dataclasses.dataclass
class ProbeScenario:
    """A frozen market snapshot for the extrapolation-aggressiveness probe."""

    prices: list[float]
    own_predictions: list[float]
    repeats: int = 5

    def __post_init__(self) -> None:
        if len(self.own_predictions) != len(self.prices) + 1:
            raise InvalidParamsError(
                "scenario needs one more own prediction than realised prices"
            )

    @property
    def t(self) -> int:
        return len(self.own_predictions)

    @property
    def target_period(self) -> int:
        return self.t + 1


# The published probe snapshot: a gentle convex curve, predicting period 8.
DEFAULT_PROBE_SCENARIO = ProbeScenario(
    prices=[53.65, 55.18, 57.52, 60.47, 63.49, 67.47],
    own_predictions=[50.0, 50.0, 51.83, 56.71, 61.26, 64.69, 68.06],
)


def run_market(
    config: ExperimentConfig,
    repeat_index: int = 0,
    out_path: Optional[str | Path] = None,
    jobs: int = 1,
    pool: Optional[MockEndpointPool] = None,
) -> RunLog:
    """Run one market for the full horizon; returns the complete RunLog.

    On an unrecoverable agent error the partial log is flushed, marked
    incomplete, and returned (never raises mid-market).
    """
    params = config.market
    H = params.n_agents
    T = params.horizon
    own_pool = pool is None and any(
        s.kind == "llm" and s.llm.endpoint.startswith(MOCK_SCHEME) for s in config.agents
    )
    if own_pool:
        pool = MockEndpointPool()
    agents = [
        _build_agent(spec, params, config.base_seed, repeat_index, h, pool)
        for h, spec in enumerate(config.agents)
    ]
    log = RunLog(
        params=params,
        agent_specs=list(config.agents),
        base_seed=config.base_seed,
        repeat_index=repeat_index,
        initial_predictions=[],
        labels=list(config.labels),
    )
    writer: Optional[RunLogWriter] = None
    if out_path is not None:
        out_path = Path(out_path)
        writer = RunLogWriter(
            out_path, out_path.with_suffix("").with_suffix(".transcripts.jsonl")
        ).open()
        writer.header(log)

    prices: list[float] = []
    predictions: list[list[float]] = [[] for _ in range(H)]  # predictions[h][tau-1] = p^e_{h,tau}
    cumulative: list[list[float]] = [[] for _ in range(H)]  # earnings per period

    def note_cap(h: int, t: int, flags: list[str]) -> None:
        if any(f in ("cap_discovered", "cap_boundary", "clamped") for f in flags):
            log.cap_discovered.setdefault(h, t)

    def drain_transcripts(h: int) -> None:
        agent = agents[h]
        if isinstance(agent, LlmForecaster) and agent.transcripts:
            for entry in agent.transcripts:
                log.transcripts.append({"agent": h, **entry})
                if writer:
                    writer.transcript(h, entry)
            agent.transcripts.clear()

    try:
        # -- first step: collect (p^e_1, p^e_2) pairs -------------------------
        init_flags: list[str] = []

        def ask_initial(h: int):
            agent = agents[h]
            if isinstance(agent, LlmForecaster):
                seed = mix_seed(config.base_seed, repeat_index, h, 1)
                return agent.initial_predictions(seed)
            pair, justification = agent.initial_predictions()
            return pair, justification, []

        initial_results = _collect(ask_initial, H, jobs)
        just0: list[str] = []
        for h, (pair, justification, flags) in enumerate(initial_results):
            log.initial_predictions.append((pair[0], pair[1]))
            predictions[h].extend(pair)
            just0.append(justification)
            init_flags.extend(f"agent{h}:{f}" for f in flags)
            note_cap(h, 1, flags)
            drain_transcripts(h)
        log.initial_justifications = just0
        if writer:
            writer.init_record(log, init_flags)

        p1 = realized_price([predictions[h][1] for h in range(H)], params)
        prices.append(p1)
        errs = [abs(p1 - predictions[h][0]) for h in range(H)]
        earns = [earnings(predictions[h][0], p1) for h in range(H)]
        for h in range(H):
            cumulative[h].append(earns[h])
        step1 = StepRecord(
            t=1,
            predictions=[predictions[h][1] for h in range(H)],
            realized_price=p1,
            prediction_errors=errs,
            earnings=earns,
            justifications=list(just0),
            flags=init_flags,
        )
        log.steps.append(step1)
        if writer:
            writer.step(step1)

        # -- remaining steps ---------------------------------------------------
        for t in range(2, T + 1):
            def ask(h: int, t: int = t):
                agent = agents[h]
                ctx = ForecastContext(
                    t=t,
                    prices=prices[: t - 1],
                    own_predictions=predictions[h][:t],
                    last_earnings=cumulative[h][t - 2],
                    total_earnings=sum(cumulative[h][: t - 1]),
                    cap_known=agent.cap_known,
                    guidance_range=params.guidance_range,
                )
                seed = mix_seed(config.base_seed, repeat_index, h, t)
                return agent.predict(ctx, seed)

            results = _collect(ask, H, jobs)
            step_flags: list[str] = []
            justs: list[str] = []
            for h, (value, justification, flags) in enumerate(results):
                predictions[h].append(value)
                justs.append(justification)
                step_flags.extend(f"agent{h}:{f}" for f in flags)
                note_cap(h, t, flags)
                drain_transcripts(h)

            p_t = realized_price([predictions[h][t] for h in range(H)], params)
            prices.append(p_t)
            errs = [abs(p_t - predictions[h][t - 1]) for h in range(H)]
            earns = [earnings(predictions[h][t - 1], p_t) for h in range(H)]
            for h in range(H):
                cumulative[h].append(earns[h])
            record = StepRecord(
                t=t,
                predictions=[predictions[h][t] for h in range(H)],
                realized_price=p_t,
                prediction_errors=errs,
                earnings=earns,
                justifications=justs,
                flags=step_flags,
            )
            log.steps.append(record)
            if writer:
                writer.step(record)
    except BubbleLabError as exc:
        log.incomplete = True
        log.error = str(exc)
        for h in range(H):  # keep the evidence of what went wrong
            drain_transcripts(h)
    finally:
        if writer:
            writer.end(log)
            writer.close()
        if own_pool and pool is not None:
            pool.close()
    return log


def _collect(ask, n: int, jobs: int) -> list:
    """Evaluate ask(0..n-1), possibly concurrently, committing in index order."""
    if jobs <= 1:
        return [ask(h) for h in range(n)]
    with ThreadPoolExecutor(max_workers=min(jobs, n)) as pool:
        futures = [pool.submit(ask, h) for h in range(n)]
        return [f.result() for f in futures]


def run_campaign(
    config: ExperimentConfig,
    out_dir: Optional[str | Path] = None,
    jobs: int = 1,
    agent_jobs: int = 1,
) -> list[RunLog]:
    """Run ``config.repeats`` markets with per-repeat seeds base_seed + index.

    ``jobs`` bounds how many repeats run concurrently (each repeat writes its
    own files, so outputs are identical regardless of parallelism for
    scripted agents); ``agent_jobs`` bounds within-period agent concurrency.
    A failed repeat is recorded as an incomplete log without cancelling the
    other repeats.
    """
    out_dir_path = Path(out_dir) if out_dir is not None else None
    if out_dir_path is not None:
        out_dir_path.mkdir(parents=True, exist_ok=True)

    def one(repeat: int, pool: MockEndpointPool) -> RunLog:
        out_path = None
        if out_dir_path is not None:
            out_path = out_dir_path / f"run_{repeat:03d}.jsonl"
        return run_market(config, repeat, out_path=out_path, jobs=agent_jobs, pool=pool)

    with MockEndpointPool() as pool:
        if jobs <= 1:
            return [one(repeat, pool) for repeat in range(config.repeats)]
        with ThreadPoolExecutor(max_workers=min(jobs, config.repeats)) as executor:
            futures = [executor.submit(one, repeat, pool) for repeat in range(config.repeats)]
            return [f.result() for f in futures]


@dataclasses.dataclass
class ProbeResult:
    values: list[float]
    errors: list[str]

    @property
    def mean(self) -> Optional[float]:
        if not self.values:
            return None
        return sum(self.values) / len(self.values)


def run_probe(
    spec: AgentSpec,
    scenario: ProbeScenario = DEFAULT_PROBE_SCENARIO,
    params: Optional[MarketParams] = None,
    base_seed: int = 0,
    pool: Optional[MockEndpointPool] = None,
) -> ProbeResult:
    """Query one agent repeatedly on a frozen context; mean over successes.

    Each repeat is an independent conversation (no carried memory), so any
    variation is the agent's own.
    """
    params = params or MarketParams()
    t = scenario.t
    earned = [earnings(scenario.own_predictions[i], scenario.prices[i]) for i in range(len(scenario.prices))]
    ctx = ForecastContext(
        t=t,
        prices=list(scenario.prices),
        own_predictions=list(scenario.own_predictions),
        last_earnings=earned[-1],
        total_earnings=sum(earned),
        cap_known=False,
        guidance_range=params.guidance_range,
    )
    own_pool = pool is None and spec.kind == "llm" and spec.llm.endpoint.startswith(MOCK_SCHEME)
    if own_pool:
        pool = MockEndpointPool()
    values: list[float] = []
    errors: list[str] = []
    try:
        for repeat in range(scenario.repeats):
            agent = _build_agent(spec, params, base_seed, repeat, 0, pool)
            try:
                if isinstance(agent, LlmForecaster):
                    value, _, _ = agent.predict(ctx, mix_seed(base_seed, repeat, 0, t))
                else:
                    value, _, _ = agent.predict(ctx, 0)
                values.append(value)
            except BubbleLabError as exc:
                errors.append(str(exc))
    finally:
        if own_pool and pool is not None:
            pool.close()
    return ProbeResult(values=values, errors=errors)
