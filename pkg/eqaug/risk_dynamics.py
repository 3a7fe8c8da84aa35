"""Risks, their gradients and the training dynamics built on them.

Expectations over the group are exact sums over every element in the flow
modes. The SGD trainer instead draws one random element per sample and step,
the way random augmentation is done in practice.
"""

import typing as t

import numpy as np

from . import constants
from .errors import DivergenceError, InvalidArgument
from .subspaces import (
    EquivariantStructure,
    distance_to_E,
    init_equivariant,
    project_E,
    project_E_perp,
    project_L,
)
from .tensor_net import (
    Architecture,
    LabeledSample,
    ParamPoint,
    forward_batch,
    grad_batch,
    loss_batch,
)

__all__ = (
    "MODES",
    "SGD_MODES",
    "INTEGRATORS",
    "RiskContext",
    "DynamicsConfig",
    "TrajectoryRecord",
    "Trajectory",
    "nominal_risk",
    "augmented_risk",
    "grad_nominal",
    "grad_augmented",
    "regularized_loss",
    "flow_rhs",
    "measure",
    "integrate",
    "initial_point",
    "sgd_train",
    "hvp_augmented",
    "hvp_nominal",
)

MODES = (
    "nominal",
    "augmented",
    "equivariant",
    "regularized_augmented",
    "regularized_nominal",
)
SGD_MODES = ("equivariant", "augmented", "nominal")
INTEGRATORS = ("euler", "rk4")


class RiskContext:
    """Everything a risk evaluation needs besides the parameters.

    The dataset is stacked into arrays once, together with its orbit
    expansion ``(rho_0(g) x, rho_L(g) y)`` laid out element-major: row
    ``g * n + i`` holds sample ``i`` transformed by ``g``.

    Parameters
    ----------
    arch: :class:`~eqaug.tensor_net.Architecture`
        The network.
    structure: :class:`~eqaug.subspaces.EquivariantStructure`
        Group, representations and subspaces.
    dataset: Iterable[:class:`~eqaug.tensor_net.LabeledSample`]
        The empirical distribution, or any object with a ``samples``
        attribute holding one.
    gamma: :class:`float`
        Strength of the distance-to-E penalty.

    Attributes
    ----------
    inputs: :class:`numpy.ndarray`
        ``n x dim X_0`` stacked inputs.
    targets: :class:`numpy.ndarray`
        ``n x dim X_L`` stacked targets.
    aug_inputs: :class:`numpy.ndarray`
        ``|G| n x dim X_0`` transformed inputs.
    aug_targets: :class:`numpy.ndarray`
        ``|G| n x dim X_L`` transformed targets.
    """

    __slots__ = (
        "arch",
        "structure",
        "gamma",
        "inputs",
        "targets",
        "aug_inputs",
        "aug_targets",
    )

    def __init__(
        self,
        arch: Architecture,
        structure: EquivariantStructure,
        dataset: t.Any,
        gamma: float = 0.0,
    ) -> None:
        """Stack the dataset and its orbit expansion.

        :raise InvalidArgument: Empty dataset, negative gamma or shapes that
            do not fit the network
        """
        samples: t.List[LabeledSample] = list(getattr(dataset, "samples", dataset))
        if not samples:
            raise InvalidArgument("The dataset is empty")
        if gamma < 0.0:
            raise InvalidArgument(f"gamma must be non-negative, got {gamma}")
        if arch.layer_shapes != structure.shapes:
            raise InvalidArgument(
                "The architecture does not match the subspace shapes"
            )

        self.arch = arch
        self.structure = structure
        self.gamma = float(gamma)
        self.inputs = np.stack([sample.input.reshape(-1) for sample in samples])
        self.targets = np.stack([sample.target.reshape(-1) for sample in samples])
        if self.inputs.shape[1] != arch.space_dims[0]:
            raise InvalidArgument(
                f"Inputs of dimension {self.inputs.shape[1]} do not fit the network"
            )
        if self.targets.shape[1] != arch.space_dims[-1]:
            raise InvalidArgument(
                f"Targets of dimension {self.targets.shape[1]} do not fit the network"
            )

        rep_in, rep_out = structure.reps[0], structure.reps[-1]
        elements = structure.group.elements()
        self.aug_inputs = np.concatenate(
            [rep_in.apply(g, self.inputs) for g in elements]
        )
        self.aug_targets = np.concatenate(
            [rep_out.apply(g, self.targets) for g in elements]
        )

    @property
    def size(self) -> int:
        """Number of samples."""
        return int(self.inputs.shape[0])

    def with_gamma(self, gamma: float) -> "RiskContext":
        """Copy of the context with another penalty strength."""
        clone = object.__new__(RiskContext)
        for name in RiskContext.__slots__:
            setattr(clone, name, getattr(self, name))
        if gamma < 0.0:
            raise InvalidArgument(f"gamma must be non-negative, got {gamma}")
        clone.gamma = float(gamma)
        return clone

    def __repr__(self) -> str:
        return (
            f"<RiskContext n={self.size} group={self.structure.group.name} "
            f"gamma={self.gamma:g}>"
        )


def _mean_loss(
    ctx: RiskContext, A: ParamPoint, inputs: np.ndarray, targets: np.ndarray
) -> float:
    outputs = forward_batch(ctx.arch, A, inputs)[-1]
    return float(np.mean(loss_batch(ctx.arch, outputs, targets)))


def nominal_risk(ctx: RiskContext, A: ParamPoint) -> float:
    """Empirical risk ``R(A)``, the mean loss over the dataset."""
    return _mean_loss(ctx, A, ctx.inputs, ctx.targets)


def augmented_risk(ctx: RiskContext, A: ParamPoint) -> float:
    """Augmented risk ``R^aug(A)``, the exact mean over every element and sample."""
    return _mean_loss(ctx, A, ctx.aug_inputs, ctx.aug_targets)


def grad_nominal(ctx: RiskContext, A: ParamPoint) -> ParamPoint:
    """Ambient gradient of :func:`nominal_risk`, not projected onto ``T L``."""
    return grad_batch(ctx.arch, A, ctx.inputs, ctx.targets)[1]


def grad_augmented(ctx: RiskContext, A: ParamPoint) -> ParamPoint:
    """Ambient gradient of :func:`augmented_risk`, not projected onto ``T L``."""
    return grad_batch(ctx.arch, A, ctx.aug_inputs, ctx.aug_targets)[1]


def regularized_loss(ctx: RiskContext, A: ParamPoint) -> float:
    """``S_gamma(A) = R^aug(A) + gamma / 2 * dist_E(A)^2``."""
    dist = distance_to_E(ctx.structure, A)
    return augmented_risk(ctx, A) + 0.5 * ctx.gamma * dist * dist


def flow_rhs(ctx: RiskContext, mode: str, A: ParamPoint) -> ParamPoint:
    """Right-hand side of the gradient flow of a training mode.

    ======================== =============================================
    mode                     right-hand side
    ======================== =============================================
    nominal                  ``-Pi_L grad R(A)``
    augmented                ``-Pi_L grad R^aug(A)``
    equivariant              ``-Pi_E grad R(A)``
    regularized_augmented    ``-Pi_L grad R^aug(A) - gamma Pi_E-perp A``
    regularized_nominal      ``-Pi_L grad R(A) - gamma Pi_E-perp A``
    ======================== =============================================

    :param ctx: Risk context
    :type ctx: :class:`RiskContext`
    :param mode: One of :data:`MODES`
    :type mode: str
    :param A: Current point, assumed to lie in ``L``
    :type A: :class:`~eqaug.tensor_net.ParamPoint`
    :return: The velocity
    :rtype: :class:`~eqaug.tensor_net.ParamPoint`
    :raise InvalidArgument: Unknown mode
    """
    if mode not in MODES:
        raise InvalidArgument(f"Unknown mode {mode!r}, expected one of {MODES}")
    structure = ctx.structure
    if mode == "equivariant":
        return -project_E(structure, grad_nominal(ctx, A))
    if mode.endswith("augmented"):
        velocity = -structure.subspace.project_tangent(grad_augmented(ctx, A))
    else:
        velocity = -structure.subspace.project_tangent(grad_nominal(ctx, A))
    if mode.startswith("regularized_"):
        velocity = velocity - ctx.gamma * project_E_perp(structure, A)
    return velocity


class DynamicsConfig:
    """Settings of one deterministic flow integration.

    Parameters
    ----------
    mode: :class:`str`
        One of :data:`MODES`.
    integrator: :class:`str`
        ``"euler"`` or ``"rk4"``.
    step_size: :class:`float`
        Time step ``h``.
    num_steps: :class:`int`
        Number of steps.
    record_every: :class:`int`
        Telemetry is recorded every that many steps, and at the last step.
    seed: :class:`int`
        Seed of the run, kept for bookkeeping.
    """

    __slots__ = (
        "mode",
        "integrator",
        "step_size",
        "num_steps",
        "record_every",
        "seed",
    )

    def __init__(
        self,
        mode: str = "augmented",
        integrator: str = "rk4",
        step_size: float = 1e-2,
        num_steps: int = 500,
        record_every: int = 1,
        seed: int = 0,
    ) -> None:
        """Validate the settings.

        :raise InvalidArgument: Unknown mode or integrator, non-positive step
            size, step count or recording period
        """
        if mode not in MODES:
            raise InvalidArgument(f"Unknown mode {mode!r}, expected one of {MODES}")
        if integrator not in INTEGRATORS:
            raise InvalidArgument(f"Unknown integrator {integrator!r}")
        if not step_size > 0.0:
            raise InvalidArgument(f"The step size must be positive, got {step_size}")
        if num_steps < 0 or record_every < 1:
            raise InvalidArgument("num_steps must be >= 0 and record_every >= 1")
        self.mode = mode
        self.integrator = integrator
        self.step_size = float(step_size)
        self.num_steps = int(num_steps)
        self.record_every = int(record_every)
        self.seed = int(seed)

    def replace(self, **changes: t.Any) -> "DynamicsConfig":
        """Copy of the settings with some fields changed."""
        fields = {name: getattr(self, name) for name in DynamicsConfig.__slots__}
        fields.update(changes)
        return DynamicsConfig(**fields)

    def __repr__(self) -> str:
        return (
            f"<DynamicsConfig {self.mode} {self.integrator} h={self.step_size:g} "
            f"steps={self.num_steps}>"
        )


class TrajectoryRecord(t.NamedTuple):
    """Telemetry of one recorded step."""

    step: int
    time: float
    dist_E: float
    risk: float
    aug_risk: float
    reg_loss: float
    param_norm: float


class Trajectory:
    """Result of an integration or of a training run.

    Attributes
    ----------
    records: List[:class:`TrajectoryRecord`]
        Recorded telemetry in step order.
    final: :class:`~eqaug.tensor_net.ParamPoint`
        Last state reached, the offending state for diverged runs.
    status: :class:`str`
        ``"ok"`` or ``"diverged"``.
    diverged_at: Optional[:class:`int`]
        Step whose state escaped, ``None`` for completed runs.
    """

    __slots__ = ("records", "final", "status", "diverged_at")

    def __init__(
        self,
        records: t.List[TrajectoryRecord],
        final: ParamPoint,
        status: str = "ok",
        diverged_at: t.Optional[int] = None,
    ) -> None:
        self.records = records
        self.final = final
        self.status = status
        self.diverged_at = diverged_at

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def column(self, name: str) -> np.ndarray:
        """Values of one telemetry field over the records.

        :param name: Field of :class:`TrajectoryRecord`
        :type name: str
        :return: One value per record
        :rtype: :class:`numpy.ndarray`
        """
        if name not in TrajectoryRecord._fields:
            raise InvalidArgument(f"Unknown trajectory column {name!r}")
        return np.array(
            [getattr(record, name) for record in self.records], dtype=np.float64
        )

    def raise_for_status(self) -> None:
        """Raise :class:`~eqaug.errors.DivergenceError` for diverged runs."""
        if self.diverged:
            step = self.diverged_at
            if step is None:
                step = self.records[-1].step + 1 if self.records else 0
            raise DivergenceError(step, self.final.norm())

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"<Trajectory records={len(self.records)} status={self.status}>"


def measure(
    ctx: RiskContext, A: ParamPoint, step: int, time: float
) -> TrajectoryRecord:
    """Evaluate the telemetry of a point."""
    dist = distance_to_E(ctx.structure, A)
    aug_risk = augmented_risk(ctx, A)
    return TrajectoryRecord(
        step=step,
        time=time,
        dist_E=dist,
        risk=nominal_risk(ctx, A),
        aug_risk=aug_risk,
        reg_loss=aug_risk + 0.5 * ctx.gamma * dist * dist,
        param_norm=A.norm(),
    )


def _escaped(A: ParamPoint) -> bool:
    return not A.is_finite() or A.norm() > constants.DIVERGENCE_NORM


def _advance(ctx: RiskContext, config: DynamicsConfig, A: ParamPoint) -> ParamPoint:
    h = config.step_size
    if config.integrator == "euler":
        return A + h * flow_rhs(ctx, config.mode, A)
    k1 = flow_rhs(ctx, config.mode, A)
    k2 = flow_rhs(ctx, config.mode, A + (0.5 * h) * k1)
    k3 = flow_rhs(ctx, config.mode, A + (0.5 * h) * k2)
    k4 = flow_rhs(ctx, config.mode, A + h * k3)
    return A + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(ctx: RiskContext, config: DynamicsConfig, A0: ParamPoint) -> Trajectory:
    """Integrate the gradient flow of ``config.mode`` from ``A0``.

    ``A0`` is projected onto ``L`` once; afterwards the velocity always lies
    in ``T L``. Step ``0`` is always recorded, then every
    ``config.record_every`` steps and the last step. A state that is not
    finite or whose norm exceeds :data:`~eqaug.constants.DIVERGENCE_NORM`
    stops the run with status ``"diverged"`` and is not recorded.

    :param ctx: Risk context
    :type ctx: :class:`RiskContext`
    :param config: Integration settings
    :type config: :class:`DynamicsConfig`
    :param A0: Initial point
    :type A0: :class:`~eqaug.tensor_net.ParamPoint`
    :return: The recorded trajectory
    :rtype: :class:`Trajectory`
    """
    A = project_L(ctx.structure, A0)
    records = [measure(ctx, A, 0, 0.0)]
    for step in range(1, config.num_steps + 1):
        A = _advance(ctx, config, A)
        if _escaped(A):
            return Trajectory(records, A, "diverged", step)
        if step % config.record_every == 0 or step == config.num_steps:
            records.append(measure(ctx, A, step, step * config.step_size))
    return Trajectory(records, A)


def initial_point(
    ctx: RiskContext, mode: str, seed: int, perturb_scale: float = 0.0
) -> ParamPoint:
    """Starting point of a run: equivariant weights, perturbed off ``E``.

    Every run with the same seed draws the same equivariant weights. Runs in
    a mode other than ``"equivariant"`` then add Gaussian noise with
    per-entry standard deviation ``perturb_scale / sqrt(fan_in)`` projected
    onto ``T E-perp``; that noise only depends on the seed too.

    :param ctx: Risk context
    :type ctx: :class:`RiskContext`
    :param mode: Training mode of the run
    :type mode: str
    :param seed: Seed of the run
    :type seed: int
    :param perturb_scale: Noise scale
    :type perturb_scale: float
    :return: The initial point
    :rtype: :class:`~eqaug.tensor_net.ParamPoint`
    """
    rng = np.random.default_rng(seed)
    X0 = init_equivariant(ctx.structure, rng)
    noise = ParamPoint(
        rng.standard_normal((rows, cols)) / np.sqrt(cols)
        for rows, cols in ctx.structure.shapes
    )
    if mode == "equivariant" or perturb_scale == 0.0:
        return X0
    return X0 + perturb_scale * project_E_perp(ctx.structure, noise)


def sgd_train(
    ctx: RiskContext,
    mode: str,
    lr: float,
    batch_size: int,
    epochs: int,
    seed: int,
    A0: t.Optional[ParamPoint] = None,
) -> Trajectory:
    """Minibatch SGD on the regularized loss, with random augmentation.

    Every epoch visits the dataset in a fresh random order. For every sample
    of every batch one group element is drawn uniformly, whatever the mode,
    so that runs only differ in how the draw is used:

    * ``"augmented"`` trains on ``(rho_0(g) x, rho_L(g) y)``,
    * ``"nominal"`` trains on ``(x, y)``,
    * ``"equivariant"`` trains on ``(x, y)`` and projects the step onto
      ``T E``.

    The update is ``A <- A - lr (Pi grad + gamma Pi_E-perp A)`` with ``Pi``
    the projection onto ``T L`` (``T E`` for equivariant runs). Telemetry is
    recorded after every step, with time ``step * lr``.

    :param ctx: Risk context, also carrying ``gamma``
    :type ctx: :class:`RiskContext`
    :param mode: One of :data:`SGD_MODES`
    :type mode: str
    :param lr: Learning rate
    :type lr: float
    :param batch_size: Samples per step
    :type batch_size: int
    :param epochs: Passes over the dataset
    :type epochs: int
    :param seed: Seed of shuffling, augmentation and default initialization
    :type seed: int
    :param A0: Initial point, :func:`initial_point` without noise when omitted
    :type A0: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :return: The recorded trajectory
    :rtype: :class:`Trajectory`
    :raise InvalidArgument: Unknown mode or invalid hyperparameters
    """
    if mode not in SGD_MODES:
        raise InvalidArgument(
            f"Unknown SGD mode {mode!r}, expected one of {SGD_MODES}"
        )
    if not lr > 0.0 or batch_size < 1 or epochs < 0:
        raise InvalidArgument("lr must be positive, batch_size >= 1 and epochs >= 0")

    structure = ctx.structure
    if A0 is None:
        A0 = initial_point(ctx, mode, seed)
    rng = np.random.default_rng(seed)
    A = project_L(structure, A0)
    records = [measure(ctx, A, 0, 0.0)]
    n, order = ctx.size, structure.group.order
    step = 0
    for _ in range(epochs):
        order_of_visit = rng.permutation(n)
        for start in range(0, n, batch_size):
            index = order_of_visit[start : start + batch_size]
            draws = rng.integers(order, size=index.size)
            if mode == "augmented":
                rows = draws * n + index
                inputs, targets = ctx.aug_inputs[rows], ctx.aug_targets[rows]
            else:
                inputs, targets = ctx.inputs[index], ctx.targets[index]
            grad = grad_batch(ctx.arch, A, inputs, targets)[1]
            if mode == "equivariant":
                direction = project_E(structure, grad)
            else:
                direction = structure.subspace.project_tangent(grad)
            if ctx.gamma:
                direction = direction + ctx.gamma * project_E_perp(structure, A)
            A = A - lr * direction
            step += 1
            if _escaped(A):
                return Trajectory(records, A, "diverged", step)
            records.append(measure(ctx, A, step, step * lr))
    return Trajectory(records, A)


def _central_difference(
    grad: t.Callable[[RiskContext, ParamPoint], ParamPoint],
    ctx: RiskContext,
    A: ParamPoint,
    Y: ParamPoint,
    eps: t.Optional[float],
) -> ParamPoint:
    if eps is None:
        eps = 1e-4 * (1.0 + A.norm()) / (1.0 + Y.norm())
    return (grad(ctx, A + eps * Y) - grad(ctx, A - eps * Y)) / (2.0 * eps)


def hvp_augmented(
    ctx: RiskContext, A: ParamPoint, Y: ParamPoint, eps: t.Optional[float] = None
) -> ParamPoint:
    """Hessian of ``R^aug`` at ``A`` applied to ``Y``, by central differences.

    :param ctx: Risk context
    :type ctx: :class:`RiskContext`
    :param A: Evaluation point
    :type A: :class:`~eqaug.tensor_net.ParamPoint`
    :param Y: Direction
    :type Y: :class:`~eqaug.tensor_net.ParamPoint`
    :param eps: Difference step, ``1e-4 (1 + |A|) / (1 + |Y|)`` by default
    :type eps: Optional[float]
    :return: ``(grad(A + eps Y) - grad(A - eps Y)) / (2 eps)``
    :rtype: :class:`~eqaug.tensor_net.ParamPoint`
    """
    return _central_difference(grad_augmented, ctx, A, Y, eps)


def hvp_nominal(
    ctx: RiskContext, A: ParamPoint, Y: ParamPoint, eps: t.Optional[float] = None
) -> ParamPoint:
    """Same as :func:`hvp_augmented` for the nominal risk."""
    return _central_difference(grad_nominal, ctx, A, Y, eps)
