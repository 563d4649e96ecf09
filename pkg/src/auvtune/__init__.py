"""auvtune: closed-loop GNC simulation and Bayesian-optimization tuning for a
miniature underactuated AUV."""

__version__ = "0.1.0"

from .config import ScenarioConfig, default_config, load_config
from .errors import ConfigError, CrashSignal

__all__ = [
    "ScenarioConfig",
    "default_config",
    "load_config",
    "ConfigError",
    "CrashSignal",
    "__version__",
]
