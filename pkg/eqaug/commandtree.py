"""Command tree of the eqaug client, with error handling."""

import argparse
import asyncio
import functools
import typing as t
import warnings
from concurrent.futures import ProcessPoolExecutor

from . import __version__, utils
from .errors import (
    CertificationError,
    CheckFailure,
    CompatibilityError,
    ConfigError,
    DivergenceError,
    FormatError,
    InvalidArgument,
)
from .lab import JobResult, Lab, flow_job, sgd_job
from .logging import Logger, StdErrLogger
from .risk_dynamics import MODES, SGD_MODES
from .storage import format_value
from .subspaces import check_compatibility
from .verify import run_suite

Command = t.Callable[[Lab, argparse.Namespace], None]
Job = t.Callable[..., JobResult]

SWEEP_MODES = ("augmented", "nominal")
MEDIANS_HEADER = ("mode", "gamma", "step", "median_dist_E")


class UsageError(Exception):
    """Invalid command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> t.NoReturn:
        raise UsageError(message)


async def _gather(jobs: int, job: Job, arguments: t.Sequence[t.Tuple]) -> t.List:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        futures = [loop.run_in_executor(executor, job, *args) for args in arguments]
        return list(await asyncio.gather(*futures))


def _add_common_options(parser: argparse.ArgumentParser, default: t.Any) -> None:
    parser.add_argument(
        "--config",
        default=default,
        help=f"configuration file (default: {utils.DEFAULT_CONFIG})",
    )
    parser.add_argument("--output", default=default, help="overrides run.output_dir")
    parser.add_argument("--jobs", type=int, default=default, help="overrides run.jobs")
    parser.add_argument("--seed", type=int, default=default, help="overrides run.seeds")


def run_jobs(
    lab: Lab, job: Job, arguments: t.Sequence[t.Tuple]
) -> t.List[JobResult]:
    """Run independent jobs, at most ``run.jobs`` at a time.

    Results come back in the order of ``arguments`` whatever the
    completion order.

    :param lab: The lab
    :type lab: :class:`~eqaug.lab.Lab`
    :param job: Module level function, called as ``job(*args)``
    :type job: Callable[..., JobResult]
    :param arguments: One argument tuple per job
    :type arguments: Sequence[Tuple]
    :return: One result per job
    :rtype: List[JobResult]
    """
    if lab.jobs == 1 or len(arguments) <= 1:
        return [job(*args) for args in arguments]
    return asyncio.run(_gather(lab.jobs, job, arguments))


class CommandTree:
    """Command tree of the client with error handling.

    Attributes
    ----------
    parser: :class:`argparse.ArgumentParser`
        Parser of the whole command line.
    commands: Dict[:class:`str`, Callable[[Lab, argparse.Namespace], None]]
        Subcommand implementations, by name.
    """

    __slots__ = ("parser", "commands")

    def __init__(self) -> None:
        """Build the parser and register the subcommands."""
        self.parser = _Parser(
            prog="eqaug",
            description="Equivariance, augmentation and regularization lab.",
        )
        self.parser.add_argument(
            "--version", action="version", version=f"%(prog)s {__version__}"
        )
        _add_common_options(self.parser, None)
        # repeated on every subcommand so they may follow its name
        common = argparse.ArgumentParser(add_help=False)
        _add_common_options(common, argparse.SUPPRESS)
        subparsers = self.parser.add_subparsers(dest="command", required=True)
        subcommand = functools.partial(subparsers.add_parser, parents=[common])

        subcommand("verify", help="run the verification suite")
        flow = subcommand("flow", help="integrate the gradient flows")
        flow.add_argument("--mode", choices=MODES, action="append")
        flow.add_argument("--gamma", type=float, help="overrides dynamics.gamma")
        sgd = subcommand("sgd", help="train one configuration by SGD")
        sgd.add_argument("--mode", choices=SGD_MODES, default="augmented")
        sgd.add_argument("--gamma", type=float, help="overrides dynamics.gamma")
        subcommand("sweep", help="SGD over dynamics.gamma_list")
        subcommand("basis", help="print the subspace dimensions")

        self.commands: t.Dict[str, Command] = {
            "verify": self.verify,
            "flow": self.flow,
            "sgd": self.sgd,
            "sweep": self.sweep,
            "basis": self.basis,
        }

    def run(self, argv: t.Optional[t.Sequence[str]] = None) -> int:
        """Parse the command line and run a subcommand.

        Warnings emitted during the run are forwarded to the logger.

        :param argv: Arguments, ``sys.argv[1:]`` by default
        :type argv: Optional[Sequence[str]]
        :return: Exit status
        :rtype: int
        """
        lab: t.Optional[Lab] = None
        source = "eqaug"
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                args = self.parser.parse_args(argv)
                source = args.command
                lab = Lab.from_file(args.config, args.output, args.jobs, args.seed)
                self.commands[args.command](lab, args)
            except Exception as error:  # pylint: disable=broad-except
                status = self.on_error(lab, source, error)
            else:
                status = 0
        logger: Logger = lab.logger if lab is not None else StdErrLogger()
        for warning in caught:
            logger.warning(source, str(warning.message))
        return status

    def on_error(self, lab: t.Optional[Lab], source: str, error: Exception) -> int:
        """Handle subcommand errors.

        :param lab: The lab, ``None`` if it could not be built
        :type lab: Optional[:class:`~eqaug.lab.Lab`]
        :param source: Subcommand that failed
        :type source: str
        :param error: Error that occurred
        :type error: Exception
        :return: Exit status
        :rtype: int
        """
        logger: Logger = lab.logger if lab is not None else StdErrLogger()

        if isinstance(error, (CheckFailure, CompatibilityError, CertificationError)):
            error_code = 1
            logger.warning(source, str(error))

        elif isinstance(error, (UsageError, ConfigError, InvalidArgument, FormatError)):
            error_code = 2
            logger.warning(source, f"{type(error).__name__}: {error}")

        elif isinstance(error, DivergenceError):
            error_code = 3
            logger.warning(source, str(error))

        else:
            error_code = 1
            logger.error(source, error)

        return error_code

    @staticmethod
    def _check_step(lab: Lab, source: str, step_size: float, gamma: float) -> None:
        if step_size * gamma >= 1.0:
            lab.logger.warning(
                source,
                f"step size {step_size:g} times gamma {gamma:g} is at least 1, "
                "expect oscillations or divergence",
            )

    @staticmethod
    def _write_runs(lab: Lab, source: str, results: t.Sequence[JobResult]) -> None:
        """Write every run, then raise for the first diverged one."""
        for name, trajectory in results:
            lab.store.write_trajectory(name, trajectory.records, trajectory.status)
            lab.logger.info(source, f"{name}: {trajectory.status}")
        for _, trajectory in results:
            trajectory.raise_for_status()

    def verify(self, lab: Lab, args: argparse.Namespace) -> None:
        """Run the verification suite and write ``checks.csv``.

        :raise CheckFailure: At least one check failed
        """
        settings = lab.config["verify"]
        ctx = lab.context()
        lab.logger.info("verify", f"checking {ctx!r}")
        reports = run_suite(
            ctx,
            lab.dynamics("augmented", lab.seeds[0]),
            lab.config["dynamics"]["gamma_list"],
            trials=settings["trials"],
            samples=settings["samples"],
            sigma_samples=settings["sigma_samples"],
            sigma_iters=settings["sigma_iters"],
            r0=settings["r0"],
        )
        lab.store.write_checks(reports)
        for report in reports:
            print(",".join(format_value(value) for value in report.as_row()))
        failed = [report.name for report in reports if not report.passed]
        print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
        if failed:
            raise CheckFailure(failed)

    def flow(self, lab: Lab, args: argparse.Namespace) -> None:
        """Integrate every configured flow mode for every seed.

        :raise DivergenceError: A run diverged
        """
        dynamics = lab.config["dynamics"]
        gamma = dynamics["gamma"] if args.gamma is None else args.gamma
        modes = args.mode or dynamics["modes"]
        for mode in modes:
            if mode not in MODES:
                raise ConfigError(f"Unknown flow mode {mode!r}")
        self._check_step(lab, "flow", dynamics["step_size"], gamma)
        arguments = [
            (lab.config, mode, gamma, seed) for mode in modes for seed in lab.seeds
        ]
        self._write_runs(lab, "flow", run_jobs(lab, flow_job, arguments))

    def sgd(self, lab: Lab, args: argparse.Namespace) -> None:
        """Train one mode for every seed.

        :raise DivergenceError: A run diverged
        """
        gamma = lab.config["dynamics"]["gamma"] if args.gamma is None else args.gamma
        self._check_step(lab, "sgd", lab.config["sgd"]["lr"], gamma)
        arguments = [(lab.config, args.mode, gamma, seed) for seed in lab.seeds]
        self._write_runs(lab, "sgd", run_jobs(lab, sgd_job, arguments))

    def sweep(self, lab: Lab, args: argparse.Namespace) -> None:
        """Train both data modes over ``dynamics.gamma_list`` and every seed.

        Besides the runs, writes ``medians.csv``: the median ``dist_E`` over
        seeds at every step, for every mode and penalty strength. Diverged
        runs are left out of the medians.

        :raise DivergenceError: A run diverged
        """
        gamma_list = [float(gamma) for gamma in lab.config["dynamics"]["gamma_list"]]
        for gamma in gamma_list:
            self._check_step(lab, "sweep", lab.config["sgd"]["lr"], gamma)
        arguments = [
            (lab.config, mode, gamma, seed)
            for gamma in gamma_list
            for mode in SWEEP_MODES
            for seed in lab.seeds
        ]
        results = run_jobs(lab, sgd_job, arguments)

        rows: t.List[t.Tuple[str, float, int, float]] = []
        for gamma in gamma_list:
            for mode in SWEEP_MODES:
                runs = [
                    trajectory
                    for (_, run_mode, run_gamma, _), (_, trajectory) in zip(
                        arguments, results
                    )
                    if run_mode == mode and run_gamma == gamma
                    and not trajectory.diverged
                ]
                if not runs:
                    continue
                medians = utils.median_curves([run.column("dist_E") for run in runs])
                steps = min(runs, key=len).column("step")
                rows.extend(
                    (mode, gamma, int(step), float(median))
                    for step, median in zip(steps, medians)
                )
        lab.store.write_table("medians", MEDIANS_HEADER, rows)
        self._write_runs(lab, "sweep", results)

    def basis(self, lab: Lab, args: argparse.Namespace) -> None:
        """Print the dimensions of ``T L``, ``T E``, ``T E-perp``."""
        _, structure = lab.network()
        _, norm = check_compatibility(structure)
        print(f"dim T L: {structure.subspace.dim}")
        print(f"dim T E: {structure.e_dim}")
        print(f"dim T E-perp: {structure.perp_dim}")
        print(f"commutator norm: {norm:.3e}")
