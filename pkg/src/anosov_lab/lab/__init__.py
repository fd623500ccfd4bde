"""Experiment orchestration: configuration, counting, fitting and reports."""
