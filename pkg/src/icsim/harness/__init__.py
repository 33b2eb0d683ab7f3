"""Experiment harness: runs, metrics, comparisons and the command line."""
