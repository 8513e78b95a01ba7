"""Experiment configs, weather ingestion and the command-line entry point."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import ResultBundle, run_experiment
from .weather import WeatherDataset, ingest_weather, synthetic_weather, weather_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "ResultBundle",
    "run_experiment",
    "WeatherDataset",
    "ingest_weather",
    "synthetic_weather",
    "weather_experiment",
]
