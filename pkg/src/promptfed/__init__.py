"""Heterogeneous federated prompt learning with null-space refinement of local prompts."""

__version__ = "0.1.0"
