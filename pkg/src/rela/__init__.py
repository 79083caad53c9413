"""Desk-scale laboratory for prior-model relabeling and adaptive-loss representation learning."""

__version__ = "0.1.0"
