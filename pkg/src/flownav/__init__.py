"""flownav: RL benchmark for microswimmer navigation in partially observable flows."""

__version__ = "0.1.0"
