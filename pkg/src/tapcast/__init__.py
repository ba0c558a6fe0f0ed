"""Topic activity forecasting: a pool of small LSTMs with per-topic selection."""

__version__ = "0.1.0"
