"""Exception hierarchy shared across the simulator.

Anything user-facing (CLI, config files) raises ``ConfigError``; numeric
failures during training raise ``DivergenceError`` so sweeps can abort a
single run without tearing down the whole experiment.
"""

from __future__ import annotations


class SimfedError(Exception):
    """Base class for all errors raised by simfed."""


class ConfigError(SimfedError, ValueError):
    """Invalid configuration value, unknown key, or infeasible parameter combo."""


class ContractError(SimfedError, ValueError):
    """A caller violated an operation precondition (dimension mismatch, empty batch, ...)."""


class DivergenceError(SimfedError, FloatingPointError):
    """Training produced a non-finite loss.

    Carries the epoch at which the divergence was detected, plus round/client
    context when raised from the federation loop.
    """

    def __init__(self, message: str, *, epoch: int, round_index: int | None = None,
                 client_id: int | None = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.round_index = round_index
        self.client_id = client_id


class ProtocolError(SimfedError):
    """A client update violated the server protocol (bad mode index, empty round)."""


class NumericalError(SimfedError):
    """A linear-algebra routine failed; ``condition`` holds a condition-number estimate."""

    def __init__(self, message: str, *, condition: float | None = None) -> None:
        super().__init__(message)
        self.condition = condition


class DegeneratePlaneError(SimfedError, ValueError):
    """The three anchor weight vectors are (numerically) collinear."""


class FitError(SimfedError):
    """A curve fit had no usable window."""


class SchemaError(SimfedError, ValueError):
    """A persisted file does not match the expected schema version."""


class UnsupportedOperationError(SimfedError, TypeError):
    """Operation not defined for this task type (e.g. entropy of a regressor)."""
