"""Offline-trained sequence models with separated policy/world latents and a
robust max-min planner, plus the two stochastic benchmark environments and
baseline models used to study optimism bias."""

__version__ = "0.1.0"
