"""Store the results of runs."""

import abc
import csv
import os
import typing as t
from os import path

from . import constants
from .errors import ConfigError, FormatError
from .risk_dynamics import TrajectoryRecord

if t.TYPE_CHECKING:
    from .verify import CheckReport
else:
    CheckReport = t.Any

STATUS_FOOTER = "status="
CHECKS_HEADER = ("name", "passed", "residual", "tolerance")


def format_value(value: t.Any) -> str:
    """Format a cell, floats with :data:`~eqaug.constants.CSV_FLOAT_FORMAT`."""
    if isinstance(value, float):
        return constants.CSV_FLOAT_FORMAT % value
    return str(value)


class Store(abc.ABC):
    """Result store abstract class."""

    __slots__ = ()

    @abc.abstractmethod
    def write_table(
        self, name: str, header: t.Sequence[str], rows: t.Iterable[t.Sequence[t.Any]]
    ) -> None:
        """Write a table.

        :param name: Name of the table, without extension
        :type name: str
        :param header: Column names
        :type header: Sequence[str]
        :param rows: Rows of values
        :type rows: Iterable[Sequence[Any]]
        """

    def write_trajectory(
        self, name: str, records: t.Sequence[TrajectoryRecord], status: str = "ok"
    ) -> None:
        """Write the telemetry of a run.

        Runs that did not end normally get a last row holding
        ``status=<status>``.

        :param name: Name of the run
        :type name: str
        :param records: Recorded telemetry
        :type records: Sequence[:class:`~eqaug.risk_dynamics.TrajectoryRecord`]
        :param status: Status of the run
        :type status: str
        """
        rows: t.List[t.Sequence[t.Any]] = [
            (record.step, *(float(value) for value in record[1:]))
            for record in records
        ]
        if status != "ok":
            rows.append((STATUS_FOOTER + status,))
        self.write_table(name, constants.TRAJECTORY_HEADER, rows)

    def write_checks(self, reports: t.Sequence[CheckReport]) -> None:
        """Write the reports of a verification run to the ``checks`` table."""
        self.write_table(
            "checks", CHECKS_HEADER, (report.as_row() for report in reports)
        )


class NoStore(Store):
    """There is no store."""

    __slots__ = ()

    def write_table(
        self, name: str, header: t.Sequence[str], rows: t.Iterable[t.Sequence[t.Any]]
    ) -> None:
        """Discard the table."""


class CSVStore(Store):
    """Write every table to a UTF-8 CSV file.

    Parameters
    ----------
    output_dir: :class:`str`
        Directory of the files, created when missing.

    Attributes
    ----------
    output_dir: :class:`str`
        Directory of the files.
    """

    __slots__ = ("output_dir",)

    def __init__(self, output_dir: str) -> None:
        self.output_dir = output_dir

    def path_of(self, name: str) -> str:
        """Path of the file holding a table."""
        return path.join(self.output_dir, f"{name}.csv")

    def write_table(
        self, name: str, header: t.Sequence[str], rows: t.Iterable[t.Sequence[t.Any]]
    ) -> None:
        os.makedirs(self.output_dir, exist_ok=True)
        with open(self.path_of(name), "w", encoding="utf-8", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(value) for value in row])


def read_trajectory(filepath: str) -> t.Tuple[t.List[TrajectoryRecord], str]:
    """Read a trajectory written by :meth:`Store.write_trajectory`.

    :param filepath: The CSV file
    :type filepath: str
    :return: The records and the status of the run
    :rtype: Tuple[List[:class:`~eqaug.risk_dynamics.TrajectoryRecord`], str]
    :raise FormatError: Unexpected header or malformed row
    """
    records: t.List[TrajectoryRecord] = []
    status = "ok"
    with open(filepath, "r", encoding="utf-8", newline="") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if header is None or tuple(header) != constants.TRAJECTORY_HEADER:
            raise FormatError(f"{filepath}: unexpected header {header}")
        for row in reader:
            if len(row) == 1 and row[0].startswith(STATUS_FOOTER):
                status = row[0][len(STATUS_FOOTER) :]
                continue
            try:
                records.append(
                    TrajectoryRecord(int(row[0]), *(float(value) for value in row[1:]))
                )
            except (TypeError, ValueError):
                raise FormatError(
                    f"{filepath}: malformed row {reader.line_num}"
                ) from None
    return records, status


def load(config: t.Mapping[str, t.Any], output_dir: str) -> Store:
    """Load the result store.

    :param config: Full configuration
    :type config: Mapping[:class:`str`, Any]
    :param output_dir: Directory of the results
    :type output_dir: str
    :return: Store instance
    :rtype: :class:`Store`
    :raise ConfigError: Unknown store type
    """
    store_type = config["output"]["type"]

    if store_type == "none":
        return NoStore()

    if store_type == "csv":
        return CSVStore(output_dir)

    raise ConfigError(f"Unsupported output type: {store_type}")
