from __future__ import annotations


class SirsSymbolicError(Exception):
    """Base class for failures the CLI reports with a dedicated exit code."""

    exit_code = 1


class ConfigError(SirsSymbolicError, ValueError):
    exit_code = 3


class IntegrationError(SirsSymbolicError):
    exit_code = 4


class ModelFileError(SirsSymbolicError):
    exit_code = 5


class StaleModelError(ModelFileError):
    """The artifact was built from a different configuration."""


class CorruptModelError(ModelFileError):
    """The artifact cannot be parsed or is missing required sections."""


class DomainViolation(SirsSymbolicError):
    """A concrete state lies outside the domain of the policy being queried."""

    exit_code = 6


class SynthesisInconsistency(SirsSymbolicError):
    exit_code = 7


MONITOR_FAILURE_EXIT = 8
