from .config import ConfigError, ExperimentConfig, OracleConfig, load_campaign, load_config
from .outputs import emit_outputs
from .runner import RunRecord, run_gpba, run_monte_carlo

__all__ = [
    "ConfigError", "ExperimentConfig", "OracleConfig", "RunRecord",
    "emit_outputs", "load_campaign", "load_config", "run_gpba", "run_monte_carlo",
]
