"""Streaming egocentric-perception-to-reaction-motion generation toolkit."""

__version__ = "0.1.0"
