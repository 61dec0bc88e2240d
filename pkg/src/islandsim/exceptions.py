"""Exception hierarchy.

ConfigError covers bad user input (parameters, config files, incompatible
functional classes) and maps to CLI exit code 2.  The numerical failures
(DivergenceError, SolverError, RegimeError) map to exit code 3.
"""

from __future__ import annotations


class IslandSimError(Exception):
    """Base class for package errors."""


class ConfigError(IslandSimError):
    """Invalid parameters, config contents, or incompatible requests."""


class DomainError(IslandSimError):
    """State or query point outside the model domain."""


class DivergenceError(IslandSimError):
    """An integral required to be finite diverged (or could not be bounded)."""


class SolverError(IslandSimError):
    """A root solve or normalization failed to meet its tolerance."""


class RegimeError(IslandSimError):
    """Operation requested outside its parameter regime (e.g. a growth-rate
    solve in the extinction regime)."""
