"""Weak KAM solutions, singular sets and gradient flows on flat tori."""

__version__ = "0.1.0"
