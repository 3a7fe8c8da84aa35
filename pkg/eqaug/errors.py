"""Exceptions raised by eqaug."""

import typing as t


class EqaugError(Exception):
    """Base class of every exception raised by eqaug."""


class InvalidArgument(EqaugError, ValueError):
    """An argument violates the precondition of an operation."""


class ConfigError(EqaugError, ValueError):
    """The configuration file is missing, malformed or has unknown keys.

    Attributes
    ----------
    lineno: Optional[:class:`int`]
        Line of the configuration file the error was found on, if known.
    """

    def __init__(self, message: str, lineno: t.Optional[int] = None) -> None:
        """Initialize the error.

        :param message: Description of the problem
        :type message: str
        :param lineno: Line of the configuration file, if known
        :type lineno: Optional[int]
        """
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class FormatError(EqaugError, ValueError):
    """A binary input file does not follow the IDX format.

    Attributes
    ----------
    offset: Optional[:class:`int`]
        Byte offset at which the file stopped making sense.
    """

    def __init__(self, message: str, offset: t.Optional[int] = None) -> None:
        """Initialize the error.

        :param message: Description of the problem
        :type message: str
        :param offset: Byte offset of the problem, if relevant
        :type offset: Optional[int]
        """
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CompatibilityError(EqaugError, RuntimeError):
    """The projections onto T L and H_G do not commute.

    Attributes
    ----------
    commutator_norm: :class:`float`
        Norm of Pi_L Pi_G - Pi_G Pi_L.
    """

    def __init__(self, commutator_norm: float) -> None:
        """Initialize the error.

        :param commutator_norm: Measured commutator norm
        :type commutator_norm: float
        """
        super().__init__(
            "Refusing to project onto E: the architecture is not compatible "
            f"with the group action (commutator norm {commutator_norm:.3e})"
        )
        self.commutator_norm = commutator_norm


class DivergenceError(EqaugError, ArithmeticError):
    """A trajectory left every reasonable bound.

    Attributes
    ----------
    step: :class:`int`
        Step at which the divergence was detected.
    norm: :class:`float`
        Parameter norm at that step.
    """

    def __init__(self, step: int, norm: float) -> None:
        """Initialize the error.

        :param step: Step at which divergence was detected
        :type step: int
        :param norm: Parameter norm at that step
        :type norm: float
        """
        super().__init__(f"Trajectory diverged at step {step} (norm {norm:.3e})")
        self.step = step
        self.norm = norm


class CertificationError(EqaugError, RuntimeError):
    """A point handed to a check does not have the required property."""


class CheckFailure(EqaugError):
    """At least one verification check failed.

    Attributes
    ----------
    failed: List[:class:`str`]
        Names of the failed checks.
    """

    def __init__(self, failed: t.List[str]) -> None:
        """Initialize the error.

        :param failed: Names of the failed checks
        :type failed: List[str]
        """
        super().__init__("Failed checks: " + ", ".join(failed))
        self.failed = failed
