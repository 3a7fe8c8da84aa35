"""Executable checks of the structural facts behind augmented training.

Every check returns a :class:`CheckReport` whose verdict is exactly
``residual <= tolerance``. Checks are deterministic given their seed.
Negative controls (points off ``E``, asymmetric data, a nonconvex toy with
negative curvature off ``E``) are exercised in the test-suite with the same
functions, so a check that cannot fail is caught there.
"""

import typing as t
import warnings

import numpy as np
from scipy import linalg, stats
from scipy.sparse import linalg as sparse_linalg

from . import constants
from .errors import CertificationError, InvalidArgument
from .risk_dynamics import (
    DynamicsConfig,
    RiskContext,
    Trajectory,
    augmented_risk,
    grad_augmented,
    grad_nominal,
    hvp_augmented,
    hvp_nominal,
    integrate,
    nominal_risk,
)
from .subspaces import (
    EquivariantStructure,
    check_compatibility,
    distance_to_E,
    group_action,
    init_equivariant,
    project_E,
    project_E_perp,
    random_perp_direction,
    random_point_in_E,
    reynolds,
)
from .tensor_net import ParamPoint

__all__ = (
    "CheckReport",
    "DecayEstimate",
    "check_compatibility_report",
    "check_reynolds",
    "check_gradient",
    "check_fact_a",
    "check_fact_b",
    "check_lemma_averaging",
    "check_invariance_theorem1",
    "check_stationarity_theorem2",
    "find_equivariant_stationary",
    "certify_local_minimum",
    "estimate_sigma",
    "estimate_c",
    "check_sigma_ordering",
    "fit_decay_rate",
    "check_attractor_theorem3",
    "check_decay",
    "check_gronwall_bound",
    "check_remark2_local",
    "run_suite",
)

Hvp = t.Callable[[RiskContext, ParamPoint, ParamPoint], ParamPoint]


class CheckReport:
    """Outcome of one check.

    Parameters
    ----------
    name: :class:`str`
        Name of the check.
    residual: :class:`float`
        Measured violation.
    tolerance: :class:`float`
        Largest acceptable violation.
    details: :class:`str`
        Human readable remarks.

    Attributes
    ----------
    passed: :class:`bool`
        ``residual <= tolerance``; a NaN residual never passes.
    """

    __slots__ = ("name", "passed", "residual", "tolerance", "details")

    def __init__(
        self, name: str, residual: float, tolerance: float, details: str = ""
    ) -> None:
        self.name = name
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        self.passed = bool(self.residual <= self.tolerance)
        self.details = details

    def as_row(self) -> t.Tuple[str, str, float, float]:
        """``(name, passed, residual, tolerance)`` for CSV output."""
        return (self.name, str(self.passed).lower(), self.residual, self.tolerance)

    def __repr__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"<CheckReport {self.name} {verdict} "
            f"residual={self.residual:.3e} tolerance={self.tolerance:.3e}>"
        )


class DecayEstimate:
    """Fitted decay of the distance to ``E`` under the regularized flow.

    Attributes
    ----------
    gamma: :class:`float`
        Penalty strength of the run.
    rate: :class:`float`
        Slope of ``log dist_E`` against time, NaN for diverged runs.
    r_squared: :class:`float`
        Coefficient of determination of the fit.
    sigma_hat: :class:`float`
        Estimated curvature bound on ``T E-perp``.
    c_hat: :class:`float`
        Estimated Lipschitz constant of the projected Hessian.
    alpha: :class:`float`
        ``(2 / gamma) R^aug(A0) + |Y0|^2``, infinite for ``gamma = 0``.
    threshold: :class:`float`
        ``c_hat sqrt(alpha) - sigma_hat``; decay is guaranteed above it.
    status: :class:`str`
        Status of the underlying trajectory.
    trajectory: :class:`~eqaug.risk_dynamics.Trajectory`
        The integrated trajectory.
    """

    __slots__ = (
        "gamma",
        "rate",
        "r_squared",
        "sigma_hat",
        "c_hat",
        "alpha",
        "threshold",
        "status",
        "trajectory",
    )

    def __init__(
        self,
        gamma: float,
        rate: float,
        r_squared: float,
        sigma_hat: float,
        c_hat: float,
        alpha: float,
        threshold: float,
        trajectory: Trajectory,
    ) -> None:
        self.gamma = gamma
        self.rate = rate
        self.r_squared = r_squared
        self.sigma_hat = sigma_hat
        self.c_hat = c_hat
        self.alpha = alpha
        self.threshold = threshold
        self.status = trajectory.status
        self.trajectory = trajectory

    @property
    def above_threshold(self) -> bool:
        """Whether gamma exceeds the estimated threshold."""
        return bool(self.gamma > self.threshold)

    def __repr__(self) -> str:
        return (
            f"<DecayEstimate gamma={self.gamma:g} rate={self.rate:.4g} "
            f"threshold={self.threshold:.4g} status={self.status}>"
        )


def _unit_tangent(
    structure: EquivariantStructure, rng: np.random.Generator
) -> ParamPoint:
    direction = structure.subspace.project_tangent(
        ParamPoint(rng.standard_normal(shape) for shape in structure.shapes)
    )
    return direction / direction.norm()


def _hessian_matrix(
    hvp: Hvp,
    ctx: RiskContext,
    A: ParamPoint,
    to_point: t.Callable[[np.ndarray], ParamPoint],
    to_coords: t.Callable[[ParamPoint], np.ndarray],
    dim: int,
) -> np.ndarray:
    """Hessian in orthonormal coordinates, one HVP per basis vector."""
    columns = []
    for j in range(dim):
        unit = np.zeros(dim)
        unit[j] = 1.0
        columns.append(to_coords(hvp(ctx, A, to_point(unit))))
    matrix = np.array(columns).T
    return 0.5 * (matrix + matrix.T)


def check_compatibility_report(structure: EquivariantStructure) -> CheckReport:
    """Report of :func:`~eqaug.subspaces.check_compatibility`."""
    _, norm = check_compatibility(structure)
    return CheckReport(
        "compatibility",
        norm,
        constants.COMPATIBILITY_TOLERANCE,
        f"dim T L = {structure.subspace.dim}, dim T E = {structure.e_dim}",
    )


def check_reynolds(
    structure: EquivariantStructure, trials: int = 5, seed: int = 0
) -> CheckReport:
    """Idempotency and self-adjointness of the group average on random layers.

    :param structure: Group and architecture data
    :type structure: :class:`~eqaug.subspaces.EquivariantStructure`
    :param trials: Number of random pairs
    :type trials: int
    :param seed: Seed of the pairs
    :type seed: int
    :return: Worst relative violation, tolerance ``1e-12``
    :rtype: :class:`CheckReport`
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A = ParamPoint(rng.standard_normal(shape) for shape in structure.shapes)
        B = ParamPoint(rng.standard_normal(shape) for shape in structure.shapes)
        averaged = reynolds(structure, A)
        idempotency = (reynolds(structure, averaged) - averaged).norm()
        idempotency /= 1.0 + A.norm()
        adjoint = abs(averaged.inner(B) - A.inner(reynolds(structure, B)))
        worst = max(worst, idempotency, adjoint / (1.0 + A.norm() * B.norm()))
    return CheckReport("reynolds", worst, 1e-12)


def check_gradient(
    ctx: RiskContext,
    A: ParamPoint,
    trials: int = 5,
    seed: int = 0,
    which: str = "augmented",
) -> CheckReport:
    """Directional finite-difference check of a risk gradient.

    For random unit ``V`` the central difference of the risk along ``V`` is
    compared with ``<grad, V>``, relative to ``|grad|``. This scales to any
    network size since it needs two risk evaluations per direction.

    :param which: ``"augmented"`` or ``"nominal"``
    :type which: str
    :return: Worst relative error, tolerance ``1e-5``
    :rtype: :class:`CheckReport`
    """
    if which == "augmented":
        risk, gradient = augmented_risk, grad_augmented
    elif which == "nominal":
        risk, gradient = nominal_risk, grad_nominal
    else:
        raise InvalidArgument(f"Unknown risk {which!r}")
    rng = np.random.default_rng(seed)
    grad = gradient(ctx, A)
    eps = 1e-5 * (1.0 + A.norm())
    worst = 0.0
    for _ in range(trials):
        V = ParamPoint(rng.standard_normal(shape) for shape in A.shapes)
        V = V / V.norm()
        fd = (risk(ctx, A + eps * V) - risk(ctx, A - eps * V)) / (2.0 * eps)
        worst = max(worst, abs(fd - grad.inner(V)) / (grad.norm() + 1e-12))
    return CheckReport(f"gradient_{which}", worst, 1e-5)


def check_fact_a(
    ctx: RiskContext, trials: int = 10, seed: int = 0, perturbation: float = 0.0
) -> CheckReport:
    """On ``E`` the augmented gradient projected onto ``T L`` equals the
    nominal gradient projected onto ``T E``.

    The two sides go through different code paths: one sums gradients over
    the transformed data, the other group-averages the nominal gradient.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param trials: Number of random points of ``E``
    :type trials: int
    :param seed: Seed of the points
    :type seed: int
    :param perturbation: Distance by which the points are pushed off ``E``
        along a random ``T E-perp`` direction, ``0`` for the actual check
    :type perturbation: float
    :return: Worst ``|Pi_L grad R^aug - Pi_E grad R| / (1 + |grad R|)``,
        tolerance ``1e-8``
    :rtype: :class:`CheckReport`
    """
    structure = ctx.structure
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A = random_point_in_E(structure, rng)
        if perturbation:
            A = A + perturbation * random_perp_direction(structure, rng)
        nominal = grad_nominal(ctx, A)
        augmented = structure.subspace.project_tangent(grad_augmented(ctx, A))
        gap = (augmented - project_E(structure, nominal)).norm()
        worst = max(worst, gap / (1.0 + nominal.norm()))
    return CheckReport(
        "fact_a", worst, 1e-8, f"{trials} points, offset {perturbation:g}"
    )


def check_fact_b(
    ctx: RiskContext, trials: int = 10, seed: int = 0, hvp: Hvp = hvp_augmented
) -> CheckReport:
    """On ``E`` the projected augmented Hessian maps ``T E-perp`` into itself.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param trials: Number of random ``(A, Y)`` pairs
    :type trials: int
    :param seed: Seed of the pairs
    :type seed: int
    :param hvp: Hessian-vector product, the finite-difference one by default
    :type hvp: Callable
    :return: Worst ``|Pi_E Pi_L H Y|`` for unit ``Y``, tolerance ``1e-5``
    :rtype: :class:`CheckReport`
    """
    structure = ctx.structure
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A = random_point_in_E(structure, rng)
        Y = random_perp_direction(structure, rng)
        image = structure.subspace.project_tangent(hvp(ctx, A, Y))
        worst = max(worst, project_E(structure, image).norm())
    return CheckReport("fact_b", worst, 1e-5, f"{trials} pairs")


def check_lemma_averaging(
    ctx: RiskContext, trials: int = 5, seed: int = 0
) -> CheckReport:
    """On ``E`` the augmented curvature along ``Y`` is the group average of the
    nominal curvature along the transformed directions ``rho-bar(g) Y``.

    :return: Worst relative gap, tolerance ``1e-5``
    :rtype: :class:`CheckReport`
    """
    structure = ctx.structure
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A = random_point_in_E(structure, rng)
        Y = _unit_tangent(structure, rng)
        augmented = hvp_augmented(ctx, A, Y).inner(Y)
        averaged = 0.0
        for g in structure.group.elements():
            moved = group_action(structure, g, Y)
            averaged += hvp_nominal(ctx, A, moved).inner(moved)
        averaged /= structure.group.order
        worst = max(worst, abs(augmented - averaged) / (1.0 + abs(augmented)))
    return CheckReport("lemma_averaging", worst, 1e-5, f"{trials} pairs")


def check_invariance_theorem1(
    ctx: RiskContext,
    config: DynamicsConfig,
    A0: t.Optional[ParamPoint] = None,
    mode: str = "augmented",
) -> CheckReport:
    """A flow started on ``E`` stays on ``E`` up to integrator drift.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param config: Integration settings; its mode is replaced by ``mode``
    :type config: :class:`~eqaug.risk_dynamics.DynamicsConfig`
    :param A0: Start on ``E``, drawn with :func:`~eqaug.subspaces.init_equivariant`
        from ``config.seed`` when omitted
    :type A0: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :param mode: Flow to run, other modes serve as negative controls
    :type mode: str
    :return: Largest distance to ``E`` along the run, tolerance
        ``10 h max(1, |A0|)``
    :rtype: :class:`CheckReport`
    :raise DivergenceError: The flow diverged
    """
    if A0 is None:
        A0 = init_equivariant(ctx.structure, np.random.default_rng(config.seed))
    trajectory = integrate(ctx, config.replace(mode=mode), A0)
    trajectory.raise_for_status()
    residual = float(np.max(trajectory.column("dist_E")))
    tolerance = 10.0 * config.step_size * max(1.0, A0.norm())
    return CheckReport(
        f"invariance_{mode}",
        residual,
        tolerance,
        f"{config.num_steps} {config.integrator} steps, h={config.step_size:g}",
    )


def check_stationarity_theorem2(
    ctx: RiskContext, A_star: ParamPoint, tol: float = 1e-8
) -> CheckReport:
    """Points of ``E`` stationary for the equivariant flow are stationary for
    the augmented flow.

    The check passes when ``|Pi_L grad R^aug|`` stays below
    ``max(tol, 10 |Pi_E grad R|)``; the details say whether both norms agree
    and whether the point is stationary.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param A_star: Candidate point of ``E``
    :type A_star: :class:`~eqaug.tensor_net.ParamPoint`
    :param tol: Gradient norm under which a point counts as stationary
    :type tol: float
    :return: The report
    :rtype: :class:`CheckReport`
    """
    structure = ctx.structure
    augmented = structure.subspace.project_tangent(grad_augmented(ctx, A_star)).norm()
    equivariant = project_E(structure, grad_nominal(ctx, A_star)).norm()
    agree = abs(augmented - equivariant) <= 1e-8 * (1.0 + equivariant)
    stationary = augmented <= tol
    details = "{}, {}".format(
        "agree" if agree else "disagree",
        "stationary" if stationary else "not stationary",
    )
    return CheckReport("stationarity", augmented, max(tol, 10.0 * equivariant), details)


def find_equivariant_stationary(
    ctx: RiskContext,
    A0: ParamPoint,
    step_size: float = 0.1,
    max_steps: int = 2000,
    tol: float = 1e-8,
    newton_steps: int = 20,
) -> t.Tuple[ParamPoint, float]:
    """Descend inside ``E`` until the projected gradient vanishes.

    Explicit Euler steps of the equivariant flow are followed, when ``T E`` is
    small enough for a dense Hessian, by Newton steps in ``T E`` coordinates
    that are kept only while they decrease the gradient norm. An Euler step
    landing on a non-finite gradient is retried with half the step size.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param A0: Starting point, projected onto ``E``
    :type A0: :class:`~eqaug.tensor_net.ParamPoint`
    :param step_size: Euler step
    :type step_size: float
    :param max_steps: Largest number of Euler steps
    :type max_steps: int
    :param tol: Target of ``|Pi_E grad R| / (1 + |A|)``
    :type tol: float
    :param newton_steps: Largest number of Newton steps
    :type newton_steps: int
    :return: The point and its projected gradient norm
    :rtype: Tuple[:class:`~eqaug.tensor_net.ParamPoint`, float]
    """
    structure = ctx.structure

    def gradient(A: ParamPoint) -> ParamPoint:
        return project_E(structure, grad_augmented(ctx, A))

    A = project_E(structure, A0)
    grad = gradient(A)
    for _ in range(max_steps):
        if grad.norm() <= tol * (1.0 + A.norm()):
            return A, grad.norm()
        candidate = A - step_size * grad
        candidate_grad = gradient(candidate)
        if not (candidate.is_finite() and candidate_grad.is_finite()):
            step_size *= 0.5
            continue
        A, grad = candidate, candidate_grad

    if structure.e_dim <= constants.DENSE_SIGMA_LIMIT:
        for _ in range(newton_steps):
            if grad.norm() <= tol * (1.0 + A.norm()):
                break
            hessian = _hessian_matrix(
                hvp_augmented,
                ctx,
                A,
                structure.e_to_point,
                structure.point_to_e,
                structure.e_dim,
            )
            try:
                step = linalg.solve(hessian, structure.point_to_e(grad), assume_a="sym")
            except linalg.LinAlgError:
                break
            candidate = A - structure.e_to_point(step)
            candidate_grad = gradient(candidate)
            if not candidate_grad.norm() < grad.norm():
                break
            A, grad = candidate, candidate_grad
    return A, grad.norm()


def certify_local_minimum(ctx: RiskContext, X_star: ParamPoint) -> float:
    """Check that a point of ``E`` is a strict local minimum of the
    equivariant problem.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param X_star: The candidate, in ``E``
    :type X_star: :class:`~eqaug.tensor_net.ParamPoint`
    :return: Smallest curvature of the risk on ``T E``, infinite when ``E`` is
        a point
    :rtype: float
    :raise CertificationError: The projected gradient does not vanish or the
        Hessian on ``T E`` is not positive definite
    """
    structure = ctx.structure
    grad_norm = project_E(structure, grad_nominal(ctx, X_star)).norm()
    if not grad_norm <= 1e-8 * (1.0 + X_star.norm()):
        raise CertificationError(
            f"Not a stationary point of the equivariant flow (gradient {grad_norm:.3e})"
        )
    if structure.e_dim == 0:
        return np.inf
    hessian = _hessian_matrix(
        hvp_augmented,
        ctx,
        X_star,
        structure.e_to_point,
        structure.point_to_e,
        structure.e_dim,
    )
    curvature = float(linalg.eigh(hessian, eigvals_only=True)[0])
    if not curvature > 0.0:
        raise CertificationError(
            f"Not a strict local minimum on E (smallest curvature {curvature:.3e})"
        )
    return curvature


def _min_perp_curvature(
    hvp: Hvp, ctx: RiskContext, A: ParamPoint, iters: int, rng: np.random.Generator
) -> float:
    structure = ctx.structure
    dim = structure.perp_dim
    if dim <= constants.DENSE_SIGMA_LIMIT:
        matrix = _hessian_matrix(
            hvp, ctx, A, structure.perp_to_point, structure.point_to_perp, dim
        )
        return float(linalg.eigh(matrix, eigvals_only=True)[0])

    def matvec(coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64).reshape(-1)
        return structure.point_to_perp(hvp(ctx, A, structure.perp_to_point(coords)))

    operator = sparse_linalg.LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
    try:
        values = sparse_linalg.eigsh(
            operator,
            k=1,
            which="SA",
            v0=rng.standard_normal(dim),
            maxiter=iters,
            tol=1e-8,
            return_eigenvectors=False,
        )
    except sparse_linalg.ArpackNoConvergence as error:
        if len(error.eigenvalues) == 0:
            raise
        warnings.warn(
            f"Lanczos did not converge in {iters} iterations, using the best estimate"
        )
        values = error.eigenvalues
    return float(np.min(values))


def estimate_sigma(
    ctx: RiskContext,
    samples_A: int = 3,
    iters: int = 100,
    seed: int = 0,
    hessian: str = "augmented",
    points: t.Optional[t.Sequence[ParamPoint]] = None,
) -> float:
    """Smallest curvature of the risk on ``T E-perp`` over sampled points of ``E``.

    For every point the smallest eigenvalue of ``Y -> Pi_E-perp Pi_L H Y`` on
    ``T E-perp`` is computed, densely when ``dim T E-perp`` is at most
    :data:`~eqaug.constants.DENSE_SIGMA_LIMIT` and by Lanczos iteration
    otherwise. The result is a sampled estimate; it may be negative.

    :param ctx: Risk context; its ``gamma`` plays no role
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param samples_A: Number of random points of ``E``
    :type samples_A: int
    :param iters: Iteration cap of the Lanczos solver
    :type iters: int
    :param seed: Seed of points and start vectors
    :type seed: int
    :param hessian: ``"augmented"`` or ``"nominal"``
    :type hessian: str
    :param points: Points to use instead of random ones
    :type points: Optional[Sequence[:class:`~eqaug.tensor_net.ParamPoint`]]
    :return: The smallest eigenvalue found
    :rtype: float
    :raise InvalidArgument: ``T E-perp`` is trivial or unknown Hessian
    """
    structure = ctx.structure
    if structure.perp_dim == 0:
        raise InvalidArgument("T E-perp is trivial, sigma is undefined")
    if hessian == "augmented":
        hvp = hvp_augmented
    elif hessian == "nominal":
        hvp = hvp_nominal
    else:
        raise InvalidArgument(f"Unknown Hessian {hessian!r}")
    rng = np.random.default_rng(seed)
    if points is None:
        points = [random_point_in_E(structure, rng) for _ in range(samples_A)]
    return min(_min_perp_curvature(hvp, ctx, A, iters, rng) for A in points)


def estimate_c(
    ctx: RiskContext, samples: int = 3, seed: int = 0, eps: float = 1e-2
) -> float:
    """Empirical Lipschitz constant of the projected augmented Hessian.

    :return: Largest ``|Pi_L (H(A + eps Z) - H(A)) Y| / (eps |Z| |Y|)`` over
        random ``A`` in ``E``, unit ``Y`` in ``T E-perp`` and unit ``Z`` in
        ``T L``
    :rtype: float
    """
    structure = ctx.structure
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        A = random_point_in_E(structure, rng)
        Y = random_perp_direction(structure, rng)
        Z = _unit_tangent(structure, rng)
        change = hvp_augmented(ctx, A + eps * Z, Y) - hvp_augmented(ctx, A, Y)
        worst = max(worst, structure.subspace.project_tangent(change).norm() / eps)
    return worst


def check_sigma_ordering(
    ctx: RiskContext, samples: int = 3, iters: int = 100, seed: int = 0
) -> CheckReport:
    """Averaging over the group can only raise the curvature bound on
    ``T E-perp``: the augmented estimate is at least the nominal one at the
    same points.

    :return: ``max(0, sigma_nominal - sigma_augmented)``, tolerance ``1e-6``
    :rtype: :class:`CheckReport`
    """
    rng = np.random.default_rng(seed)
    points = [random_point_in_E(ctx.structure, rng) for _ in range(samples)]
    augmented = estimate_sigma(ctx, iters=iters, seed=seed, points=points)
    nominal = estimate_sigma(
        ctx, iters=iters, seed=seed, hessian="nominal", points=points
    )
    return CheckReport(
        "sigma_ordering",
        max(0.0, nominal - augmented),
        1e-6,
        f"sigma_aug={augmented:.6g} sigma_nominal={nominal:.6g}",
    )


def fit_decay_rate(trajectory: Trajectory, skip: float = 0.2) -> t.Tuple[float, float]:
    """Least squares slope of ``log dist_E`` against time.

    :param trajectory: Recorded run
    :type trajectory: :class:`~eqaug.risk_dynamics.Trajectory`
    :param skip: Leading fraction of the records treated as transient
    :type skip: float
    :return: Slope and coefficient of determination
    :rtype: Tuple[float, float]
    :raise InvalidArgument: Fewer than two records left to fit
    """
    times = trajectory.column("time")
    logs = np.log(np.maximum(trajectory.column("dist_E"), constants.LOG_FLOOR))
    start = int(skip * len(times))
    if len(times) - start < 2:
        raise InvalidArgument("At least two records are needed to fit a rate")
    fit = stats.linregress(times[start:], logs[start:])
    r_squared = float(fit.rvalue**2) if np.isfinite(fit.rvalue) else 0.0
    return float(fit.slope), r_squared


def _attractor_start(
    structure: EquivariantStructure, X0: ParamPoint, direction: ParamPoint, r0: float
) -> t.Tuple[ParamPoint, ParamPoint]:
    """``X0`` projected onto ``E`` and an offset of norm ``r0`` in ``T E-perp``."""
    offset = project_E_perp(structure, direction)
    norm = offset.norm()
    if not norm > 0.0:
        raise InvalidArgument("The offset direction has no T E-perp component")
    return project_E(structure, X0), (r0 / norm) * offset


def _attractor_threshold(
    c_hat: float, sigma_hat: float, gamma: float, risk: float, dist: float
) -> t.Tuple[float, float]:
    """``alpha = (2 / gamma) R^aug(A0) + dist_E(A0)^2`` and the penalty
    strength ``c_hat sqrt(alpha) - sigma_hat`` above which decay is certain."""
    alpha = (2.0 / gamma) * risk + dist**2 if gamma > 0 else np.inf
    threshold = c_hat * np.sqrt(alpha) - sigma_hat if c_hat > 0 else -sigma_hat
    return float(alpha), float(threshold)


def _attractor_config(
    config: DynamicsConfig, gamma: float, sigma_hat: float
) -> DynamicsConfig:
    step = config.step_size
    if gamma > 0:
        step = min(step, constants.ATTRACTOR_STEP_GAMMA / gamma)
    duration = config.num_steps * config.step_size
    rate = gamma + abs(sigma_hat)
    if rate > 0:
        duration = min(duration, constants.ATTRACTOR_HORIZON / rate)
    num_steps = int(round(duration / step))
    return config.replace(
        mode="regularized_augmented",
        step_size=step,
        num_steps=num_steps,
        record_every=min(config.record_every, max(1, num_steps // 10)),
    )


def check_attractor_theorem3(
    ctx: RiskContext,
    gamma_list: t.Sequence[float],
    r0: float,
    config: DynamicsConfig,
    X0: t.Optional[ParamPoint] = None,
    direction: t.Optional[ParamPoint] = None,
    sigma_samples: int = 2,
    sigma_iters: int = 100,
    c_samples: int = 2,
) -> t.List[DecayEstimate]:
    """Integrate the regularized augmented flow for every gamma and fit the
    decay rate of the distance to ``E``.

    All runs start from the same ``A0 = X0 + Y0`` with ``X0`` in ``E`` and
    ``Y0`` in ``T E-perp``, ``|Y0| = r0``. Sigma is estimated at ``X0`` and at
    ``sigma_samples`` random points of ``E``.

    A run lasts ``config.num_steps * config.step_size`` at most, cut to
    :data:`~eqaug.constants.ATTRACTOR_HORIZON` e-foldings at rate
    ``gamma + |sigma_hat|``, with steps no longer than
    ``ATTRACTOR_STEP_GAMMA / gamma``.

    :param ctx: Risk context, its gamma is replaced by every value of the list
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param gamma_list: Penalty strengths
    :type gamma_list: Sequence[float]
    :param r0: Initial distance to ``E``
    :type r0: float
    :param config: Integration settings; the mode is forced to
        ``"regularized_augmented"``
    :type config: :class:`~eqaug.risk_dynamics.DynamicsConfig`
    :param X0: Base point, projected onto ``E``, random when omitted
    :type X0: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :param direction: Offset direction, projected onto ``T E-perp``, random
        when omitted
    :type direction: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :param sigma_samples: Random points used by :func:`estimate_sigma`
    :type sigma_samples: int
    :param sigma_iters: Lanczos iteration cap
    :type sigma_iters: int
    :param c_samples: Samples used by :func:`estimate_c`
    :type c_samples: int
    :return: One estimate per gamma, in order
    :rtype: List[:class:`DecayEstimate`]
    """
    structure = ctx.structure
    rng = np.random.default_rng(config.seed)
    if X0 is None:
        X0 = init_equivariant(structure, rng)
    if direction is None:
        direction = random_perp_direction(structure, rng)
    X0, Y0 = _attractor_start(structure, X0, direction, r0)
    A0 = X0 + Y0

    points = [X0] + [random_point_in_E(structure, rng) for _ in range(sigma_samples)]
    sigma_hat = estimate_sigma(ctx, iters=sigma_iters, seed=config.seed, points=points)
    c_hat = estimate_c(ctx, c_samples, config.seed)
    risk0 = augmented_risk(ctx, A0)

    estimates = []
    for gamma in gamma_list:
        alpha, threshold = _attractor_threshold(c_hat, sigma_hat, gamma, risk0, r0)
        trajectory = integrate(
            ctx.with_gamma(gamma), _attractor_config(config, gamma, sigma_hat), A0
        )
        if trajectory.diverged or len(trajectory) < 2:
            rate, r_squared = np.nan, 0.0
        else:
            rate, r_squared = fit_decay_rate(trajectory)
        estimates.append(
            DecayEstimate(
                gamma, rate, r_squared, sigma_hat, c_hat, alpha, threshold, trajectory
            )
        )
    return estimates


def check_decay(
    estimate: DecayEstimate, expected_rate: float, rel_tol: float = 0.02
) -> CheckReport:
    """Compare a fitted rate with a known one, relative to the known one."""
    residual = abs(estimate.rate - expected_rate) / abs(expected_rate)
    return CheckReport(
        f"decay[{estimate.gamma:g}]",
        residual if np.isfinite(residual) else np.inf,
        rel_tol,
        f"rate={estimate.rate:.6g} expected={expected_rate:.6g}",
    )


def _linear_decay_rate(
    ctx: RiskContext, X0: ParamPoint, Y0: ParamPoint, estimate: DecayEstimate
) -> float:
    """Rate fitted to the exact distance curve of a risk with constant Hessian.

    The ``T E-perp`` component then evolves as ``exp(-(H + gamma) t) Y0``,
    ``H`` the Hessian block on ``T E-perp``; the curve is sampled at the
    recorded times of ``estimate`` and fitted the same way.
    """
    structure = ctx.structure
    hessian = _hessian_matrix(
        hvp_augmented,
        ctx,
        X0,
        structure.perp_to_point,
        structure.point_to_perp,
        structure.perp_dim,
    )
    values, vectors = linalg.eigh(hessian)
    weights = (vectors.T @ structure.point_to_perp(Y0)) ** 2
    records = estimate.trajectory.records
    times = np.array([record.time for record in records])
    dists = np.sqrt(np.exp(-2.0 * np.outer(times, values + estimate.gamma)) @ weights)
    exact = Trajectory(
        [
            record._replace(dist_E=float(dist))
            for record, dist in zip(records, dists)
        ],
        estimate.trajectory.final,
    )
    rate, _ = fit_decay_rate(exact)
    return rate


def check_gronwall_bound(estimate: DecayEstimate, slack: float = 0.05) -> CheckReport:
    """``dist_E(t)^2 <= dist_E(0)^2 exp(2 (C sqrt(alpha) - sigma - gamma) t)``
    at every recorded time.

    The bound only holds when gamma exceeds the threshold; below it the
    report passes with a zero residual and says so. Both sides are compared
    as logarithms. Records whose distance is below
    :data:`~eqaug.constants.DIST_NOISE_FLOOR` times ``1 + |A|`` are skipped.

    :param estimate: Result of :func:`check_attractor_theorem3`
    :type estimate: :class:`DecayEstimate`
    :param slack: Relative slack on the right-hand side
    :type slack: float
    :return: Worst relative excess over the bound
    :rtype: :class:`CheckReport`
    """
    name = f"gronwall[{estimate.gamma:g}]"
    if not estimate.above_threshold:
        return CheckReport(
            name, 0.0, slack, "gamma below threshold, bound not applicable"
        )
    if estimate.trajectory.diverged:
        return CheckReport(name, np.inf, slack, "diverged")
    times = estimate.trajectory.column("time")
    dist = estimate.trajectory.column("dist_E")
    resolved = dist > constants.DIST_NOISE_FLOOR * (
        1.0 + estimate.trajectory.column("param_norm")
    )
    if not resolved[0]:
        return CheckReport(name, 0.0, slack, "starts on E")
    exponent = 2.0 * (estimate.threshold - estimate.gamma)
    log_excess = (
        2.0 * (np.log(dist[resolved]) - np.log(dist[0])) - exponent * times[resolved]
    )
    excess = float(np.expm1(min(float(np.max(log_excess)), 700.0)))
    skipped = int(np.count_nonzero(~resolved))
    return CheckReport(
        name,
        max(excess, 0.0),
        slack,
        f"exponent={exponent:.6g}, {skipped} records at the noise floor",
    )


def check_remark2_local(
    ctx: RiskContext,
    gamma: float,
    perturb_scale: float,
    config: DynamicsConfig,
    X_star: t.Optional[ParamPoint] = None,
    direction: t.Optional[ParamPoint] = None,
    contraction: float = 0.1,
    sigma_hat: t.Optional[float] = None,
    c_hat: t.Optional[float] = None,
    sigma_iters: int = 100,
    c_samples: int = 2,
) -> CheckReport:
    """The regularized augmented flow started near a strict local minimum of
    the equivariant problem returns to it.

    The minimum is certified first with :func:`certify_local_minimum`. The
    details give the threshold ``c_hat sqrt(alpha) - sigma_hat`` of the
    starting point and whether gamma is above it; return is only guaranteed
    above it, so a run below it serves as a negative control.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param gamma: Penalty strength of the flow
    :type gamma: float
    :param perturb_scale: Size of the initial perturbation
    :type perturb_scale: float
    :param config: Integration settings; the mode is forced to
        ``"regularized_augmented"``
    :type config: :class:`~eqaug.risk_dynamics.DynamicsConfig`
    :param X_star: The minimum, searched from a random point of ``E`` when
        omitted
    :type X_star: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :param direction: Perturbation direction in ``T L``, random when omitted
    :type direction: Optional[:class:`~eqaug.tensor_net.ParamPoint`]
    :param contraction: Required ratio of final to initial distance
    :type contraction: float
    :param sigma_hat: Curvature bound on ``T E-perp``, estimated at ``X_star``
        when omitted
    :type sigma_hat: Optional[float]
    :param c_hat: Hessian Lipschitz constant, estimated when omitted
    :type c_hat: Optional[float]
    :param sigma_iters: Lanczos iteration cap
    :type sigma_iters: int
    :param c_samples: Samples used by :func:`estimate_c`
    :type c_samples: int
    :return: Final distance to ``X_star``, tolerance
        ``contraction * perturb_scale``
    :rtype: :class:`CheckReport`
    :raise CertificationError: ``X_star`` is not a strict local minimum
    """
    structure = ctx.structure
    rng = np.random.default_rng(config.seed)
    if X_star is None:
        X_star, _ = find_equivariant_stationary(ctx, init_equivariant(structure, rng))
    X_star = project_E(structure, X_star)
    certify_local_minimum(ctx, X_star)

    if direction is None:
        direction = _unit_tangent(structure, rng)
    direction = structure.subspace.project_tangent(direction)
    start = X_star
    if perturb_scale > 0.0:
        start = X_star + perturb_scale * direction / direction.norm()

    if structure.perp_dim == 0:
        threshold = -np.inf
    else:
        if sigma_hat is None:
            sigma_hat = estimate_sigma(
                ctx, iters=sigma_iters, seed=config.seed, points=[X_star]
            )
        if c_hat is None:
            c_hat = estimate_c(ctx, c_samples, config.seed)
        _, threshold = _attractor_threshold(
            c_hat,
            sigma_hat,
            gamma,
            augmented_risk(ctx, start),
            distance_to_E(structure, start),
        )

    trajectory = integrate(
        ctx.with_gamma(gamma), config.replace(mode="regularized_augmented"), start
    )
    trajectory.raise_for_status()
    final = (trajectory.final - X_star).norm()
    tolerance = max(contraction * perturb_scale, 1e-10 * (1.0 + X_star.norm()))
    side = "above" if gamma > threshold else "below"
    return CheckReport(
        f"remark2[{gamma:g}]",
        final,
        tolerance,
        f"gamma {side} threshold {threshold:.4g}, "
        f"final dist_E {distance_to_E(structure, trajectory.final):.3e}",
    )


def _control_report(
    name: str,
    control: CheckReport,
    reference: CheckReport,
    ratio: float = 100.0,
    floor: float = 1e-10,
) -> CheckReport:
    """Negative control: passes when the control residual is at least
    ``ratio`` times the residual of the check it mirrors, floored at ``floor``.
    """
    needed = ratio * max(reference.residual, floor)
    return CheckReport(
        name,
        needed / max(control.residual, np.finfo(float).tiny),
        1.0,
        f"control residual {control.residual:.3e}, needed {needed:.3e}",
    )


def _remark2_report(
    ctx: RiskContext,
    config: DynamicsConfig,
    gamma_list: t.Sequence[float],
    perturb_scale: float,
    X_star: ParamPoint,
    sigma_iters: int,
    contraction: float = 0.1,
) -> CheckReport:
    """:func:`check_remark2_local` for the smallest usable penalty strength.

    A strength is usable when it is above the threshold, keeps
    ``gamma * h <= 1`` and its guaranteed rate contracts the perturbation
    within ten times ``config.num_steps``. Points that are not certified
    minima, or lists without a usable strength, give a passing report that
    says the check does not apply.
    """
    structure = ctx.structure
    try:
        curvature = certify_local_minimum(ctx, X_star)
    except CertificationError as error:
        return CheckReport("remark2", 0.0, 1.0, f"not applicable: {error}")
    direction = _unit_tangent(structure, np.random.default_rng(config.seed))
    start = X_star + perturb_scale * direction
    sigma_hat = estimate_sigma(
        ctx, iters=sigma_iters, seed=config.seed, points=[X_star]
    )
    c_hat = estimate_c(ctx, seed=config.seed)
    risk, dist = augmented_risk(ctx, start), distance_to_E(structure, start)
    step_size = config.step_size
    budget = 10 * max(config.num_steps, 1)
    for gamma in sorted(float(gamma) for gamma in gamma_list):
        if gamma * step_size > 1.0:
            continue
        _, threshold = _attractor_threshold(c_hat, sigma_hat, gamma, risk, dist)
        rate = min(curvature, gamma - threshold)
        if not rate > 0.0:
            continue
        num_steps = int(np.ceil(2.0 * np.log(1.0 / contraction) / (rate * step_size)))
        if num_steps > budget:
            continue
        return check_remark2_local(
            ctx,
            gamma,
            perturb_scale,
            config.replace(num_steps=num_steps, record_every=max(1, num_steps // 10)),
            X_star=X_star,
            direction=direction,
            contraction=contraction,
            sigma_hat=sigma_hat,
            c_hat=c_hat,
        )
    return CheckReport(
        "remark2",
        0.0,
        1.0,
        f"not applicable: no penalty strength contracts within {budget} steps",
    )


def run_suite(
    ctx: RiskContext,
    config: DynamicsConfig,
    gamma_list: t.Sequence[float] = (1e-2, 1.0, 1e2),
    trials: int = 10,
    samples: int = 3,
    sigma_samples: int = 2,
    sigma_iters: int = 100,
    r0: float = 0.1,
) -> t.List[CheckReport]:
    """Run every check that applies to a general network.

    An incompatible structure stops the suite after the compatibility
    report, since nothing else can be projected. The negative controls of
    :func:`check_fact_a` and :func:`check_invariance_theorem1` must exceed the
    residual of the check they mirror a hundredfold. Stationarity and the
    local return are checked at the point found by
    :func:`find_equivariant_stationary`. When the estimated Hessian Lipschitz
    constant vanishes the fitted decay rates are also compared with the
    closed-form ones.

    :param ctx: Risk context
    :type ctx: :class:`~eqaug.risk_dynamics.RiskContext`
    :param config: Integration settings of the flow checks, whose seed also
        seeds every other check
    :type config: :class:`~eqaug.risk_dynamics.DynamicsConfig`
    :param gamma_list: Penalty strengths of the attractor checks
    :type gamma_list: Sequence[float]
    :param trials: Points per structural check
    :type trials: int
    :param samples: Points of the curvature ordering check
    :type samples: int
    :param sigma_samples: Points used to estimate sigma
    :type sigma_samples: int
    :param sigma_iters: Lanczos iteration cap
    :type sigma_iters: int
    :param r0: Initial distance of the attractor runs and size of the local
        perturbation
    :type r0: float
    :return: Reports in execution order
    :rtype: List[:class:`CheckReport`]
    """
    structure = ctx.structure
    seed = config.seed
    reports = [check_compatibility_report(structure)]
    if not reports[0].passed:
        return reports

    rng = np.random.default_rng(seed)
    A = random_point_in_E(structure, rng)
    reports.append(check_reynolds(structure, seed=seed))
    reports.append(check_gradient(ctx, A, seed=seed))
    reports.append(check_gradient(ctx, A, seed=seed, which="nominal"))
    fact_a = check_fact_a(ctx, trials, seed)
    reports.append(fact_a)
    if structure.perp_dim == 0:
        return reports

    control = check_fact_a(ctx, trials, seed, perturbation=0.1)
    reports.append(_control_report("fact_a_control", control, fact_a))
    reports.append(check_fact_b(ctx, trials, seed))
    reports.append(check_lemma_averaging(ctx, min(trials, 5), seed))
    invariance = check_invariance_theorem1(ctx, config)
    reports.append(invariance)
    control = check_invariance_theorem1(ctx, config, mode="nominal")
    reports.append(_control_report("invariance_control", control, invariance))

    X_star, _ = find_equivariant_stationary(
        ctx, A, max_steps=config.num_steps, tol=1e-10, newton_steps=5
    )
    reports.append(check_stationarity_theorem2(ctx, X_star))
    reports.append(
        _remark2_report(ctx, config, gamma_list, r0, X_star, sigma_iters)
    )
    reports.append(check_sigma_ordering(ctx, samples, sigma_iters, seed))

    X0 = init_equivariant(structure, rng)
    direction = random_perp_direction(structure, rng)
    estimates = check_attractor_theorem3(
        ctx,
        gamma_list,
        r0,
        config,
        X0=X0,
        direction=direction,
        sigma_samples=sigma_samples,
        sigma_iters=sigma_iters,
    )
    linear = (
        bool(estimates)
        and estimates[0].c_hat <= 1e-6 * (1.0 + abs(estimates[0].sigma_hat))
        and structure.perp_dim <= constants.DENSE_SIGMA_LIMIT
    )
    X0, Y0 = _attractor_start(structure, X0, direction, r0)
    for estimate in estimates:
        reports.append(check_gronwall_bound(estimate))
        if linear:
            expected = _linear_decay_rate(ctx, X0, Y0, estimate)
            reports.append(check_decay(estimate, expected))
    return reports
