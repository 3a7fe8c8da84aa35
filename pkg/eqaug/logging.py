"""Provide logging to the eqaug command-line client."""

import abc
import sys
import traceback
import typing as t
from datetime import datetime, timezone

from .errors import ConfigError


def utcnow() -> str:
    """Current UTC time, to the second."""
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


class Logger(abc.ABC):
    """Provide logging to the eqaug client."""

    __slots__ = ()

    @abc.abstractmethod
    def write(self, text: str) -> None:
        """Emit one formatted entry.

        :param text: The entry, without trailing newline
        :type text: str
        """

    def info(self, source: str, message: str) -> None:
        """Log progress of a run.

        :param source: What is logging (e.g. the subcommand name)
        :type source: str
        :param message: The message
        :type message: str
        """
        self.write(f"{utcnow()} UTC [info] {source}: {message}")

    def warning(self, source: str, message: str) -> None:
        """Log a condition that does not stop the run.

        :param source: What is logging
        :type source: str
        :param message: The message
        :type message: str
        """
        self.write(f"{utcnow()} UTC [warning] {source}: {message}")

    def error(self, source: str, error: BaseException) -> None:
        """Log an exception with its traceback.

        :param source: The source of the exception (e.g. the subcommand name)
        :type source: str
        :param error: The exception
        :type error: BaseException
        """
        formatted_traceback = "".join(traceback.format_tb(error.__traceback__))
        self.write(
            f"{utcnow()} UTC [error] Error in {source}\n"
            f"{type(error).__name__} : {error}\n\n"
            f"{formatted_traceback}"
        )


class StdErrLogger(Logger):
    """Write log messages to stderr."""

    __slots__ = ()

    def write(self, text: str) -> None:
        print(text, file=sys.stderr, flush=True)


class FileLogger(Logger):
    """Append log messages to a file.

    Parameters
    ----------
    path: :class:`str`
        The log file.

    Attributes
    ----------
    path: :class:`str`
        The log file, created on first write.
    """

    __slots__ = ("path",)

    def __init__(self, path: str) -> None:
        self.path = path

    def write(self, text: str) -> None:
        with open(self.path, "a", encoding="utf-8") as file:
            file.write(text + "\n")


class NullLogger(Logger):
    """Discard every message."""

    __slots__ = ()

    def write(self, text: str) -> None:
        """Do nothing."""


def load(config: t.Mapping[str, t.Any]) -> Logger:
    """Load the logger.

    :param config: Full configuration
    :type config: Mapping[:class:`str`, Any]
    :return: The logger instance.
    :rtype: :class:`Logger`
    :raise ConfigError: Unknown logger type
    """
    config = config["logging"]
    if config["type"] == "stderr":
        return StdErrLogger()

    if config["type"] == "file":
        return FileLogger(config["file"]["path"])

    if config["type"] == "none":
        return NullLogger()

    raise ConfigError(f"Unknown logger: {config['type']}")
