"""Friction-aware reinforcement learning lab for hourly Forex bars.

Importing the package registers the "bars" DataFrame accessor and the "equity"
Series accessor.
"""
from fxrl import bars, metrics  # noqa: F401

__version__ = '0.1.0'
