"""Shared exception types."""

from __future__ import annotations


class TracelabError(Exception):
    """Base class for all package-specific failures."""


class EnumerationCapError(TracelabError):
    """Exhaustive enumeration would exceed the configured cap."""

    def __init__(self, required: int, cap: int):
        super().__init__(
            f"exhaustive enumeration needs {required} items, cap is {cap}"
        )
        self.required = required
        self.cap = cap


class ZeroSupportError(TracelabError):
    """The rollout policy assigns zero probability to a sampled token."""


class UnknownStateError(TracelabError):
    """A tabular policy was queried at a state it has no entry for.

    Usually signals a policy built for a different MDP (wrong horizon,
    vocabulary, or state-key mode).
    """


class ConfigError(TracelabError):
    """A run configuration violates the strict schema."""


class TrainingDivergedError(TracelabError):
    """The training objective became non-finite."""
