"""Exception hierarchy shared by the library and the CLI."""
from __future__ import annotations

from typing import Iterable, Optional


class SepcorError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(SepcorError):
    """A matrix expected to be symmetric positive definite is not."""

    def __init__(self, message: str, label: Optional[str] = None) -> None:
        super().__init__(message)
        self.label = label


class IndefiniteU(NotPositiveDefinite):
    def __init__(self, message: str = "update of U is not positive definite") -> None:
        super().__init__(message, label="u")


class IndefiniteV(NotPositiveDefinite):
    def __init__(self, message: str = "update of V is not positive definite") -> None:
        super().__init__(message, label="v")


class SingularDesign(SepcorError):
    """X'X is numerically singular."""


class NotEstimable(SepcorError):
    """The requested estimator does not exist for this sample size."""


class DegenerateScatter(SepcorError):
    """A diagonal entry of the residual scatter is not strictly positive."""


class InvalidRho(SepcorError):
    """Correlation parameter outside the positive definite range."""


class InsufficientReplicates(SepcorError):
    """Too many bootstrap refits failed for the test to be meaningful."""


class InputError(SepcorError):
    """Malformed user input; carries one diagnostic per problem found."""

    def __init__(self, message: str, diagnostics: Iterable[str] = ()) -> None:
        self.summary = message
        self.diagnostics = list(diagnostics)
        detail = "; ".join(self.diagnostics)
        super().__init__(f"{message}: {detail}" if detail else message)
