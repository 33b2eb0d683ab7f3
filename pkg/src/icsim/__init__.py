"""Intent-driven management of a simulated edge-cloud compute continuum."""

__version__ = "0.1.0"
