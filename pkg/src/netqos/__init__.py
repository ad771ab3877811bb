"""Cellular QoS cognition toolkit: telemetry generation, datasets, learners and admission control."""
__version__ = "0.1.0"
