"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class MfgError(Exception):
    """Base class for all package errors."""


class ConfigError(MfgError):
    """Invalid problem or experiment configuration."""


class CflError(ConfigError):
    """Time step too coarse for the realized drift."""


class DomainError(MfgError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class SolverError(MfgError):
    """A nonlinear or linear solve did not converge."""


class InvariantError(MfgError):
    """A structural invariant (positivity, mass, certificate sign) was violated."""


class DiagnosticsError(MfgError):
    """Non-finite values detected while marching a solver."""
