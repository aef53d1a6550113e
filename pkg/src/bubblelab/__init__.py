"""Learning-to-forecast asset market laboratory.

A positive-feedback forecasting market with scripted and LLM-backed agents,
plus the statistics pipeline that quantifies mispricing, bubbles, forecast
rationality, and data leakage.
"""

from .agents import AgentSpec, ForecastContext, ScriptedAgent, forecast, initial_pair, mix_seed
from .analytics import (
    BubbleShape,
    CampaignSummary,
    MeasureSet,
    RunReport,
    aggregate_reports,
    analyze_run,
    bias_test_per_agent,
    bubble_shape,
    categorize_run,
    compute_measures,
    decompose_errors,
    detect_bubble,
    detect_bubble_mean,
    robustness_grid,
    speculative_test,
)
from .errors import (
    BubbleLabError,
    ConfigError,
    InsufficientDataError,
    InvalidInputError,
    InvalidParamsError,
    ParseError,
    TransportError,
)
from .leakage import (
    KeywordHit,
    classify_justifications,
    default_keywords,
    keyword_scan,
    leakage_probe,
    validate_classifier,
)
from .llm import ChatClient, LlmAgentConfig, LlmForecaster, ParsedPrediction, parse_prediction
from .logio import ExperimentConfig, load_experiment_config, read_run_log
from .market import (
    MarketParams,
    RunLog,
    StepRecord,
    earnings,
    fundamental_price,
    re_trajectory,
    realized_price,
)
from .mockserver import MockChatServer
from .orchestrator import ProbeScenario, run_campaign, run_market, run_probe
from .stats import (
    OlsFit,
    TestResult,
    cohen_kappa,
    mann_whitney_one_sided,
    ols_joint_test,
    quantile_linear,
    t_test_one_sided_greater,
)

__version__ = "0.1.0"
