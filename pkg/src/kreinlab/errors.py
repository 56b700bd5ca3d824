"""Exception types shared by the library and the CLI."""

from __future__ import annotations


class DomainError(ValueError):
    """A spectral parameter or mode lies outside the domain of an operation.

    ``mode`` and ``lam`` identify the offending fiber when known.
    """

    def __init__(self, message: str, *, mode=None, lam=None):
        self.mode = mode
        self.lam = lam
        details = []
        if mode is not None:
            details.append(f"mode={tuple(int(v) for v in mode)}")
        if lam is not None:
            details.append(f"lambda={lam!r}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class NearEigenvalueError(DomainError):
    """The spectral parameter is (numerically) an eigenvalue of a fiber operator."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
