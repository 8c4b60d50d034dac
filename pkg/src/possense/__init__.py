"""Tracking, social-group detection and distancing monitors for fixed cameras."""

__version__ = "0.1.0"
