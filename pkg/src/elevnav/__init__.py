"""Elevator-boarding navigation: crowd simulation, value network, training, evaluation."""

__version__ = "0.1.0"
