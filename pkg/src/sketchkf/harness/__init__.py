"""Experiment configuration, baselines, Monte-Carlo driver and command line."""
