"""Desk-scale GUI-agent RL toolkit: hybrid rewards, GRPO with gradient
preservation, off-policy diagnostics, calibrated data routing and a static
action-prediction scorer, all runnable against a synthetic GUI environment."""

__version__ = "0.1.0"
