"""Survival machine-learning toolkit and benchmark harness for
time-to-adverse-outcome prediction on linked-administrative-style data."""

__version__ = "0.1.0"
