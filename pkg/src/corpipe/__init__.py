"""Coreference resolution with empty nodes: two-stage and single-stage pipelines."""

__version__ = "0.1.0"
