"""
Exceptions shared across the engine.

Module-specific failures (datasets, fetching, reports, checkpoints) are
defined next to the code that raises them.
"""

from __future__ import annotations


class ConfigError(Exception):
    """Raised when a configuration, architecture or layer call is invalid."""
    pass


class ProtocolError(Exception):
    """Raised when a batch does not agree with its class mask.

    This indicates a mismatch between the task stream and the head mode,
    never a user configuration problem.
    """
    pass
