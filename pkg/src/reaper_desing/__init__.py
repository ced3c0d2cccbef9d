"""Desk-scale pipeline for desingularized translating-soliton surfaces."""

__version__ = "0.1.0"
