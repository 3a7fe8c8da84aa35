"""The experiment lab: configuration turned into networks, data and runs."""

import copy
import typing as t

from . import group_core, subspaces, utils
from .data_io import (
    Dataset,
    downsample,
    read_idx,
    synth_asymmetric_task,
    synth_invariant_task,
)
from .errors import ConfigError
from .logging import Logger
from .logging import load as load_logger
from .risk_dynamics import (
    DynamicsConfig,
    RiskContext,
    Trajectory,
    initial_point,
    integrate,
    sgd_train,
)
from .storage import Store
from .storage import load as load_store
from .tensor_net import Architecture

JobResult = t.Tuple[str, Trajectory]


class Lab:
    """Everything a subcommand needs, built from one configuration.

    Parameters
    ----------
    config: Dict[:class:`str`, Any]
        Complete configuration, defaults included.

    Attributes
    ----------
    config: Dict[:class:`str`, Any]
        Dictionnary representing the configuration of the lab
    logger: :class:`logging.Logger`
        Logger instance of the lab.
    store: :class:`storage.Store`
        Where results are written.
    """

    __slots__ = ("config", "logger", "store", "_cache")

    def __init__(self, config: t.Dict[str, t.Any]) -> None:
        """Initialize the lab and load its dependencies."""
        self.config = config
        self.logger: Logger = load_logger(config)
        self.store: Store = load_store(config, config["run"]["output_dir"])
        self._cache: t.Dict[str, t.Any] = {}

    @classmethod
    def from_file(
        cls,
        config_path: t.Optional[str] = None,
        output_dir: t.Optional[str] = None,
        jobs: t.Optional[int] = None,
        seed: t.Optional[int] = None,
    ) -> "Lab":
        """Load a configuration file and apply command-line overrides.

        If you do not give a path, the lab will try finding an
        ``eqaug.toml`` file in the working directory.

        :param config_path: Path to the configuration file
        :type config_path: Optional[str]
        :param output_dir: Overrides ``run.output_dir``
        :type output_dir: Optional[str]
        :param jobs: Overrides ``run.jobs``
        :type jobs: Optional[int]
        :param seed: Replaces ``run.seeds`` by this single seed
        :type seed: Optional[int]
        :return: The lab
        :rtype: :class:`Lab`
        :raise ConfigError: Invalid configuration
        """
        config = utils.load_config(config_path)
        if output_dir is not None:
            config["run"]["output_dir"] = output_dir
        if jobs is not None:
            config["run"]["jobs"] = jobs
        if seed is not None:
            config["run"]["seeds"] = [seed]
        return cls(config)

    @property
    def seeds(self) -> t.List[int]:
        seeds = [int(seed) for seed in self.config["run"]["seeds"]]
        if not seeds:
            raise ConfigError("run.seeds must not be empty")
        return seeds

    @property
    def jobs(self) -> int:
        jobs = int(self.config["run"]["jobs"])
        if jobs < 1:
            raise ConfigError(f"run.jobs must be positive, got {jobs}")
        return jobs

    def dataset(self) -> Dataset:
        """Load the configured dataset.

        :return: The dataset
        :rtype: :class:`~eqaug.data_io.Dataset`
        :raise ConfigError: Unknown dataset
        """
        if "dataset" not in self._cache:
            data = self.config["data"]
            # Same task for every seed
            if data["dataset"] == "synth_inv":
                dataset = synth_invariant_task(data["limit"], data["size"], 0)
            elif data["dataset"] == "synth_asym":
                dataset = synth_asymmetric_task(data["limit"], data["size"], 0)
            elif data["dataset"] == "idx":
                dataset = downsample(
                    read_idx(data["idx_images"], data["idx_labels"], data["limit"]),
                    data["pool"],
                )
            else:
                raise ConfigError(f"Unknown dataset: {data['dataset']}")
            self._cache["dataset"] = dataset
        return self._cache["dataset"]

    def _representation(
        self, group: group_core.FiniteGroup, side: int, channels: int
    ) -> group_core.Representation:
        action = self.config["group"]["action"]
        if action == "rotate90":
            return group_core.rotation_rep_on_grid(group, side, side, channels)
        if action == "permutation":
            return group_core.row_shift_rep_on_grid(group, side, side, channels)
        if action == "trivial":
            return group_core.trivial_rep(group, side * side * channels)
        raise ConfigError(f"Unknown group action: {action}")

    def network(self) -> t.Tuple[Architecture, subspaces.EquivariantStructure]:
        """Build the network and its equivariant structure.

        Hidden layers map ``h x h`` images with ``channels[k]`` channels; a
        last dense layer maps to the classes, on which the group acts
        trivially.

        :return: The architecture and the structure
        :rtype: Tuple[:class:`~eqaug.tensor_net.Architecture`,
            :class:`~eqaug.subspaces.EquivariantStructure`]
        :raise ConfigError: Unsupported settings
        """
        if "network" in self._cache:
            return self._cache["network"]
        group_config, net = self.config["group"], self.config["network"]
        if group_config["group"] != "cyclic":
            raise ConfigError(f"Unknown group: {group_config['group']}")
        dataset = self.dataset()
        shape = dataset.input_shape
        if len(shape) != 3 or shape[0] != shape[1]:
            raise ConfigError(f"Square images are needed, got {shape}")
        side, _, in_channels = shape
        if dataset.num_classes is None:
            raise ConfigError("The dataset must be a classification dataset")
        group = group_core.cyclic_group(group_config["group_order"])

        channels = [in_channels] + [int(c) for c in net["channels"]]
        reps = [self._representation(group, side, c) for c in channels]
        reps.append(group_core.trivial_rep(group, dataset.num_classes))

        layers = []
        for c_in, c_out in zip(channels, channels[1:]):
            if net["subspace"] == "conv":
                layers.append(
                    subspaces.conv_subspace(
                        side, side, c_in, c_out, net["support"], net["padding"]
                    )
                )
            elif net["subspace"] == "dense":
                layers.append(
                    subspaces.dense_subspace(side * side * c_out, side * side * c_in)
                )
            else:
                raise ConfigError(f"Unknown subspace: {net['subspace']}")
        layers.append(
            subspaces.dense_subspace(dataset.num_classes, side * side * channels[-1])
        )

        arch = Architecture(
            [rep.dim for rep in reps],
            [net["nonlinearity"]] * (len(channels) - 1) + ["identity"],
            net["loss"],
        )
        structure = subspaces.EquivariantStructure(
            reps, subspaces.AffineSubspace.product(*layers)
        )
        self._cache["network"] = (arch, structure)
        return self._cache["network"]

    def context(self, gamma: t.Optional[float] = None) -> RiskContext:
        """Risk context of the configured network and data.

        :param gamma: Penalty strength, ``dynamics.gamma`` by default
        :type gamma: Optional[float]
        """
        if "context" not in self._cache:
            arch, structure = self.network()
            self._cache["context"] = RiskContext(
                arch, structure, self.dataset(), self.config["dynamics"]["gamma"]
            )
        ctx: RiskContext = self._cache["context"]
        return ctx if gamma is None else ctx.with_gamma(gamma)

    def dynamics(self, mode: str, seed: int) -> DynamicsConfig:
        """Integration settings of a flow run."""
        settings = self.config["dynamics"]
        return DynamicsConfig(
            mode=mode,
            integrator=settings["integrator"],
            step_size=settings["step_size"],
            num_steps=settings["num_steps"],
            record_every=settings["record_every"],
            seed=seed,
        )

    def __repr__(self) -> str:
        return f"<Lab output={self.config['run']['output_dir']!r}>"


def _job_lab(config: t.Dict[str, t.Any]) -> Lab:
    # Workers never log nor write, the parent process does
    config = copy.deepcopy(config)
    config["logging"]["type"] = "none"
    config["output"]["type"] = "none"
    return Lab(config)


def flow_job(
    config: t.Dict[str, t.Any], mode: str, gamma: float, seed: int
) -> JobResult:
    """Integrate one flow; runs in a worker process.

    :return: Name of the run and its trajectory
    :rtype: Tuple[str, :class:`~eqaug.risk_dynamics.Trajectory`]
    """
    lab = _job_lab(config)
    ctx = lab.context(gamma)
    A0 = initial_point(ctx, mode, seed, config["dynamics"]["perturb_scale"])
    trajectory = integrate(ctx, lab.dynamics(mode, seed), A0)
    return utils.run_name("flow", mode, gamma, seed), trajectory


def sgd_job(
    config: t.Dict[str, t.Any], mode: str, gamma: float, seed: int
) -> JobResult:
    """Train one network by SGD; runs in a worker process.

    :return: Name of the run and its trajectory
    :rtype: Tuple[str, :class:`~eqaug.risk_dynamics.Trajectory`]
    """
    lab = _job_lab(config)
    ctx = lab.context(gamma)
    sgd = config["sgd"]
    A0 = initial_point(ctx, mode, seed, config["dynamics"]["perturb_scale"])
    trajectory = sgd_train(
        ctx, mode, sgd["lr"], sgd["batch_size"], sgd["epochs"], seed, A0=A0
    )
    return utils.run_name("sgd", mode, gamma, seed), trajectory
