"""Configuration, built-in problems, the optimization loop and file output."""

from .config import RunConfig, load_config, parse_config, serialize
from .run import RunFailed, RunResult, run

__all__ = ["RunConfig", "RunFailed", "RunResult", "load_config", "parse_config", "run", "serialize"]
