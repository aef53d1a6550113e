"""Run-log and experiment-config serialization.

Run logs are JSON Lines: one header record, one init record (the first-step
prediction pairs), one record per period, and one end record carrying the
completion status and per-agent cap-discovery periods. Transcripts go to a
sidecar JSONL keyed by (agent, t). Serialization is canonical (sorted keys,
no whitespace) so equal-seed scripted runs are byte-identical.

Experiment configs are JSON with a schema_version; unknown fields are
rejected so typos in experiment definitions fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import IO, Iterator, Optional

from .agents import AgentSpec
from .errors import ConfigError
from .llm import LlmAgentConfig
from .market import MarketParams, RunLog, StepRecord

SCHEMA_VERSION = 1

_MARKET_FIELDS = {"r", "mean_dividend", "cap", "horizon", "n_agents", "guidance_range"}
_AGENT_COMMON_FIELDS = {"kind", "seed", "initial", "name"}
_AGENT_KIND_FIELDS = {
    "fundamentalist": set(),
    "naive": set(),
    "trend": {"trend_weight"},
    "adaptive": {"adapt_weight"},
    "rational_bubble": {"bubble_constant"},
    "llm": {
        "endpoint", "model", "temperature", "memory", "prompt_variant",
        "llm_seed", "reasoning_toggle", "max_retries", "timeout",
        "backoff_base", "api_key_env",
    },
}
_CONFIG_FIELDS = {"schema_version", "market", "agents", "repeats", "base_seed", "labels"}


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------

def _reject_unknown(data: dict, allowed: set, where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)} in {where}")


def market_params_from_dict(data: dict) -> MarketParams:
    _reject_unknown(data, _MARKET_FIELDS, "market")
    kwargs = dict(data)
    if "guidance_range" in kwargs:
        kwargs["guidance_range"] = tuple(kwargs["guidance_range"])
    return MarketParams(**kwargs)


def agent_spec_from_dict(data: dict) -> AgentSpec:
    if "kind" not in data:
        raise ConfigError("agent entry lacks 'kind'")
    kind = data["kind"]
    if kind not in _AGENT_KIND_FIELDS:
        raise ConfigError(f"unknown agent kind {kind!r}")
    _reject_unknown(data, _AGENT_COMMON_FIELDS | _AGENT_KIND_FIELDS[kind], f"agent kind {kind!r}")
    spec_kwargs: dict = {"kind": kind}
    if "seed" in data:
        spec_kwargs["seed"] = int(data["seed"])
    if "name" in data:
        spec_kwargs["name"] = str(data["name"])
    initial = data.get("initial")
    if initial == "uniform":
        spec_kwargs["initial_policy"] = "uniform"
    elif initial is not None:
        if not (isinstance(initial, (list, tuple)) and len(initial) == 2):
            raise ConfigError("agent 'initial' must be a two-value pair or \"uniform\"")
        spec_kwargs["initial_pair"] = (float(initial[0]), float(initial[1]))
    for key in ("trend_weight", "adapt_weight", "bubble_constant"):
        if key in data:
            spec_kwargs[key] = float(data[key])
    if kind == "llm":
        for required in ("endpoint", "model"):
            if required not in data:
                raise ConfigError(f"llm agent needs '{required}'")
        llm_kwargs = {
            "endpoint": data["endpoint"],
            "model": data["model"],
        }
        for src, dst in (
            ("temperature", "temperature"), ("memory", "memory"),
            ("prompt_variant", "prompt_variant"), ("llm_seed", "seed"),
            ("reasoning_toggle", "reasoning_toggle"), ("max_retries", "max_retries"),
            ("timeout", "timeout"), ("backoff_base", "backoff_base"),
            ("api_key_env", "api_key_env"),
        ):
            if src in data:
                llm_kwargs[dst] = data[src]
        spec_kwargs["llm"] = LlmAgentConfig(**llm_kwargs)
    return AgentSpec(**spec_kwargs)


def agent_spec_to_dict(spec: AgentSpec) -> dict:
    out: dict = {"kind": spec.kind}
    if spec.seed:
        out["seed"] = spec.seed
    if spec.name:
        out["name"] = spec.name
    if spec.initial_policy == "uniform":
        out["initial"] = "uniform"
    elif spec.initial_pair != (50.0, 50.0):
        out["initial"] = list(spec.initial_pair)
    if spec.kind == "trend":
        out["trend_weight"] = spec.trend_weight
    elif spec.kind == "adaptive":
        out["adapt_weight"] = spec.adapt_weight
    elif spec.kind == "rational_bubble":
        out["bubble_constant"] = spec.bubble_constant
    elif spec.kind == "llm":
        cfg = spec.llm
        out.update({"endpoint": cfg.endpoint, "model": cfg.model})
        defaults = LlmAgentConfig(endpoint="", model="")
        for src, dst in (
            ("temperature", "temperature"), ("memory", "memory"),
            ("prompt_variant", "prompt_variant"), ("seed", "llm_seed"),
            ("reasoning_toggle", "reasoning_toggle"), ("max_retries", "max_retries"),
            ("timeout", "timeout"), ("backoff_base", "backoff_base"),
            ("api_key_env", "api_key_env"),
        ):
            value = getattr(cfg, src)
            if value != getattr(defaults, src):
                out[dst] = value
    return out


@dataclasses.dataclass
class ExperimentConfig:
    """A complete experiment definition."""

    market: MarketParams
    agents: list[AgentSpec]
    repeats: int = 1
    base_seed: int = 0
    labels: list[str] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.agents) != self.market.n_agents:
            raise ConfigError(
                f"config declares {self.market.n_agents} agents but lists {len(self.agents)}"
            )
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    _reject_unknown(data, _CONFIG_FIELDS, "experiment config")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    market = market_params_from_dict(data.get("market", {}))
    agents_data = data.get("agents")
    if not isinstance(agents_data, list) or not agents_data:
        raise ConfigError("experiment config needs a non-empty 'agents' list")
    agents = [agent_spec_from_dict(a) for a in agents_data]
    return ExperimentConfig(
        market=market,
        agents=agents,
        repeats=int(data.get("repeats", 1)),
        base_seed=int(data.get("base_seed", 0)),
        labels=list(data.get("labels", [])),
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return experiment_config_from_dict(data)


def experiment_config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "market": {
            "r": config.market.r,
            "mean_dividend": config.market.mean_dividend,
            "cap": config.market.cap,
            "horizon": config.market.horizon,
            "n_agents": config.market.n_agents,
            "guidance_range": list(config.market.guidance_range),
        },
        "agents": [agent_spec_to_dict(a) for a in config.agents],
        "repeats": config.repeats,
        "base_seed": config.base_seed,
        "labels": list(config.labels),
    }


# ---------------------------------------------------------------------------
# Run-log writing
# ---------------------------------------------------------------------------

class RunLogWriter:
    """Streams a run to disk as it happens, one JSONL record per event."""

    def __init__(self, path: str | Path, transcripts_path: Optional[str | Path] = None):
        self.path = Path(path)
        self.transcripts_path = Path(transcripts_path) if transcripts_path else None
        self._fh: Optional[IO[str]] = None
        self._tfh: Optional[IO[str]] = None

    def open(self) -> "RunLogWriter":
        self._fh = open(self.path, "w", encoding="utf-8")
        if self.transcripts_path:
            self._tfh = open(self.transcripts_path, "w", encoding="utf-8")
        return self

    def _emit(self, record: dict) -> None:
        assert self._fh is not None
        self._fh.write(dumps(record) + "\n")
        self._fh.flush()

    def header(self, log: RunLog) -> None:
        self._emit({
            "kind": "header",
            "schema_version": SCHEMA_VERSION,
            "market_params": {
                "r": log.params.r,
                "mean_dividend": log.params.mean_dividend,
                "cap": log.params.cap,
                "horizon": log.params.horizon,
                "n_agents": log.params.n_agents,
                "guidance_range": list(log.params.guidance_range),
            },
            "agent_specs": [agent_spec_to_dict(s) for s in log.agent_specs],
            "base_seed": log.base_seed,
            "repeat_index": log.repeat_index,
            "run_seed": log.base_seed + log.repeat_index,
            "labels": list(log.labels),
        })

    def init_record(self, log: RunLog, flags: list[str]) -> None:
        self._emit({
            "kind": "init",
            "initial_predictions": [list(p) for p in log.initial_predictions],
            "justifications": list(log.initial_justifications),
            "flags": flags,
        })

    def step(self, record: StepRecord) -> None:
        self._emit({
            "kind": "step",
            "t": record.t,
            "predictions": record.predictions,
            "price": record.realized_price,
            "errors": record.prediction_errors,
            "earnings": record.earnings,
            "justifications": record.justifications,
            "flags": record.flags,
        })

    def transcript(self, agent: int, entry: dict) -> None:
        if self._tfh is None:
            return
        record = {"agent": agent}
        record.update(entry)
        self._tfh.write(dumps(record) + "\n")
        self._tfh.flush()

    def end(self, log: RunLog) -> None:
        self._emit({
            "kind": "end",
            "incomplete": log.incomplete,
            "error": log.error,
            "cap_discovered": {str(k): v for k, v in sorted(log.cap_discovered.items())},
        })

    def close(self) -> None:
        if self._fh:
            self._fh.close()
        if self._tfh:
            self._tfh.close()


# ---------------------------------------------------------------------------
# Run-log reading
# ---------------------------------------------------------------------------

def read_run_log(path: str | Path, strict: bool = True) -> RunLog:
    """Reconstruct a RunLog from a JSONL file.

    With strict=False, corrupt lines are skipped; otherwise they raise.
    """
    header: Optional[dict] = None
    init: Optional[dict] = None
    steps: list[StepRecord] = []
    end: Optional[dict] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError:
                if strict:
                    raise ConfigError(f"{path}:{lineno}: corrupt JSONL line")
                continue
            kind = record.get("kind")
            if kind == "header":
                header = record
            elif kind == "init":
                init = record
            elif kind == "step":
                steps.append(StepRecord(
                    t=record["t"],
                    predictions=record["predictions"],
                    realized_price=record["price"],
                    prediction_errors=record["errors"],
                    earnings=record["earnings"],
                    justifications=record["justifications"],
                    flags=record.get("flags", []),
                ))
            elif kind == "end":
                end = record
    if header is None:
        raise ConfigError(f"{path}: missing header record")
    if init is None:
        # a run aborted during the first step flushes header + end only
        init = {"initial_predictions": [], "justifications": []}
    params = market_params_from_dict(header["market_params"])
    specs = [agent_spec_from_dict(s) for s in header["agent_specs"]]
    log = RunLog(
        params=params,
        agent_specs=specs,
        base_seed=header["base_seed"],
        repeat_index=header["repeat_index"],
        initial_predictions=[tuple(p) for p in init["initial_predictions"]],
        steps=steps,
        initial_justifications=init.get("justifications", []),
        labels=header.get("labels", []),
    )
    if end is not None:
        log.incomplete = bool(end.get("incomplete", False))
        log.error = end.get("error")
        log.cap_discovered = {int(k): v for k, v in end.get("cap_discovered", {}).items()}
    else:
        log.incomplete = True
        log.error = "log has no end record"
    return log


def iter_run_paths(directory: str | Path) -> Iterator[Path]:
    """Run-log files in a campaign directory, in name order."""
    directory = Path(directory)
    yield from sorted(p for p in directory.glob("*.jsonl") if not p.name.endswith(".transcripts.jsonl"))
