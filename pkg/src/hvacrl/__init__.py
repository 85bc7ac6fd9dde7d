"""Setpoint-based HVAC control benchmark: building simulator, tabular Q-Learning and DQN agents."""
from __future__ import annotations

__version__ = "0.1.0"
