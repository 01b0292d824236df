"""Metrics, experiment runner and command-line interface."""
