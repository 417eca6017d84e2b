"""Exception hierarchy; each class carries the CLI exit code it maps to."""

from __future__ import annotations


class RobustUtilityError(Exception):
    exit_code = 1
    kind = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def as_json(self) -> dict:
        return {"error": self.kind, "message": str(self), **self.details}


class ModelError(RobustUtilityError):
    """The market document is malformed or violates an invariant."""

    exit_code = 2
    kind = "model"


class ToleranceError(RobustUtilityError):
    """A solver result missed its stated tolerance."""

    exit_code = 3
    kind = "tolerance"


class ArbitrageError(RobustUtilityError):
    """The market (or the option set) admits an arbitrage."""

    exit_code = 4
    kind = "arbitrage"
