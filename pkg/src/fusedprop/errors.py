"""Exception types shared across the package.

Each error carries an ``exit_code`` used by the command line front end:
1 check failure, 2 configuration error, 3 numeric divergence.
"""

from __future__ import annotations


class FusedPropError(Exception):
    exit_code = 1


class DimensionError(FusedPropError, ValueError):
    """Operand extents do not agree."""


class NumericError(FusedPropError, ArithmeticError):
    """A non-finite value reached a place that requires finite input."""

    exit_code = 3

    def __init__(self, message: str, sample: int | None = None):
        super().__init__(message)
        self.sample = sample


class ContractError(FusedPropError):
    """A documented precondition was violated by the caller."""


class TapeReuseError(ContractError):
    pass


class OracleError(FusedPropError):
    """A verification oracle could not produce a trustworthy answer."""


class DegenerateNormError(NumericError):
    pass


class ConfigError(FusedPropError, ValueError):
    exit_code = 2

    def __init__(self, message: str, code: str = "CONFIG"):
        super().__init__(f"{code}: {message}")
        self.code = code


class UnsupportedLambdaError(ConfigError):
    def __init__(self, loss: str):
        super().__init__(
            f"loss {loss!r} has no generator/discriminator scaling factor; "
            "use invfusedprop instead",
            code="UNSUPPORTED_LAMBDA",
        )


class SingularScaleError(NumericError):
    """Raised when a scaling factor is evaluated at its pole."""

    def __init__(self, code: str, sample: int, y: float):
        super().__init__(
            f"{code}: discriminator output {y!r} at sample {sample} is at the "
            "pole of the scaling factor; try the other fused form",
            sample=sample,
        )
        self.code = code


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int, losses: dict | None = None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.losses = losses or {}
