"""Structural checks, curvature estimates and the attractor experiments.

Each check is run where it must pass and, where possible, on a setup built
to make it fail.
"""

import numpy as np
import pytest
from conftest import (
    NEGATIVE_TOY_E_CURVATURE,
    NEGATIVE_TOY_PERP_CURVATURE,
    negative_toy_minimum,
    negative_toy_perp,
    perp_spectrum,
    second_moment,
)

from eqaug import group_core, subspaces, verify
from eqaug.errors import CertificationError, InvalidArgument
from eqaug.risk_dynamics import (
    DynamicsConfig,
    RiskContext,
    Trajectory,
    TrajectoryRecord,
    hvp_augmented,
    hvp_nominal,
)
from eqaug.tensor_net import Architecture, LabeledSample, ParamPoint


def exact_quadratic_hvp(ctx, A, Y):
    return ParamPoint([Y[0] @ second_moment(ctx)])


def quadratic_perp_direction(ctx):
    """Slowest decaying direction of ``T E-perp``, in the first row."""
    values, vectors = perp_spectrum(ctx)
    return values[0], ParamPoint([np.stack([vectors[:, 0], np.zeros(4)])])


def synthetic_trajectory(times, dists):
    records = [
        TrajectoryRecord(step, time, dist, 0.0, 0.0, 0.0, 0.0)
        for step, (time, dist) in enumerate(zip(times, dists))
    ]
    return Trajectory(records, ParamPoint.zeros([(1, 1)]))


@pytest.fixture(scope="module")
def quadratic_minimum(quadratic_ctx):
    A0 = ParamPoint.zeros(quadratic_ctx.structure.shapes)
    X_star, norm = verify.find_equivariant_stationary(quadratic_ctx, A0, tol=1e-10)
    assert norm < 1e-9
    return X_star


class TestCheckReport:
    """Verdicts of individual reports."""

    def test_verdict(self):
        assert verify.CheckReport("a", 1e-9, 1e-8).passed
        assert verify.CheckReport("a", 1e-8, 1e-8).passed
        assert not verify.CheckReport("a", 2e-8, 1e-8).passed

    def test_nan_never_passes(self):
        assert not verify.CheckReport("a", np.nan, np.inf).passed

    def test_as_row(self):
        report = verify.CheckReport("fact_a", 0.5, 1.0, "remark")
        assert report.as_row() == ("fact_a", "true", 0.5, 1.0)
        assert verify.CheckReport("x", 2.0, 1.0).as_row()[1] == "false"


class TestStructuralChecks:
    """Reynolds operator, gradients and the facts about ``E``."""

    def test_compatibility(self, conv_ctx):
        report = verify.check_compatibility_report(conv_ctx.structure)
        assert report.passed
        assert report.details == "dim T L = 82, dim T E = 22"

    def test_incompatible_support(self):
        group = group_core.cyclic_group(4)
        rep = group_core.rotation_rep_on_grid(group, 4, 4, 1)
        subspace = subspaces.conv_subspace(4, 4, 1, 1, [(0, 0), (0, 1)])
        structure = subspaces.EquivariantStructure([rep, rep], subspace)
        report = verify.check_compatibility_report(structure)
        assert not report.passed
        assert report.residual > 0.1

    def test_reynolds(self, conv_ctx):
        assert verify.check_reynolds(conv_ctx.structure).passed

    def test_gradient_unknown_risk(self, conv_ctx):
        A = ParamPoint.zeros(conv_ctx.structure.shapes)
        with pytest.raises(InvalidArgument):
            verify.check_gradient(conv_ctx, A, which="regularized")

    def test_gradient_names(self, conv_ctx, rng):
        A = subspaces.random_point_in_E(conv_ctx.structure, rng)
        assert verify.check_gradient(conv_ctx, A).name == "gradient_augmented"
        nominal = verify.check_gradient(conv_ctx, A, which="nominal")
        assert nominal.name == "gradient_nominal"
        assert nominal.passed

    @pytest.mark.parametrize("fixture", ["conv_ctx", "quadratic_ctx"])
    def test_fact_a(self, request, fixture):
        ctx = request.getfixturevalue(fixture)
        assert verify.check_fact_a(ctx).passed

    def test_fact_a_fails_off_E(self, quadratic_ctx):
        report = verify.check_fact_a(quadratic_ctx, perturbation=0.1)
        assert not report.passed
        assert report.residual > 1e-3

    def test_fact_b(self, conv_ctx):
        assert verify.check_fact_b(conv_ctx).passed

    def test_fact_b_exact_hessian(self, quadratic_ctx):
        report = verify.check_fact_b(quadratic_ctx, hvp=exact_quadratic_hvp)
        assert report.residual < 1e-8

    def test_fact_b_fails_for_nominal_hessian(self, quadratic_ctx):
        """The Hessian of the non-augmented risk mixes ``E`` and its complement."""
        report = verify.check_fact_b(quadratic_ctx, hvp=hvp_nominal)
        assert not report.passed

    @pytest.mark.parametrize("fixture", ["conv_ctx", "quadratic_ctx"])
    def test_lemma_averaging(self, request, fixture):
        ctx = request.getfixturevalue(fixture)
        assert verify.check_lemma_averaging(ctx).passed


class TestInvariance:
    """Flows started on ``E``."""

    def test_augmented_flow_stays_on_E(self, conv_ctx):
        config = DynamicsConfig(step_size=0.01, num_steps=50, record_every=10)
        report = verify.check_invariance_theorem1(conv_ctx, config)
        assert report.passed
        assert report.name == "invariance_augmented"
        assert report.residual < 1e-12

    def test_equivariant_flow_stays_on_E(self, linear_asym_ctx):
        config = DynamicsConfig(step_size=1e-3, num_steps=200, record_every=50)
        report = verify.check_invariance_theorem1(
            linear_asym_ctx, config, mode="equivariant"
        )
        assert report.passed

    def test_nominal_flow_leaves_E(self, linear_asym_ctx):
        config = DynamicsConfig(step_size=1e-3, num_steps=3000, record_every=100)
        nominal = verify.check_invariance_theorem1(
            linear_asym_ctx, config, mode="nominal"
        )
        augmented = verify.check_invariance_theorem1(linear_asym_ctx, config)
        assert not nominal.passed
        assert nominal.residual >= 10.0 * nominal.tolerance
        assert augmented.passed


class TestStationarity:
    """Stationary points of the equivariant problem."""

    def test_minimum_is_stationary_for_augmented_flow(
        self, quadratic_ctx, quadratic_minimum
    ):
        report = verify.check_stationarity_theorem2(quadratic_ctx, quadratic_minimum)
        assert report.passed
        assert report.details == "agree, stationary"

    def test_generic_point_of_E(self, conv_ctx, rng):
        A = subspaces.random_point_in_E(conv_ctx.structure, rng)
        report = verify.check_stationarity_theorem2(conv_ctx, A)
        assert report.passed
        assert report.details == "agree, not stationary"

    def test_find_stationary_stays_on_E(self, quadratic_ctx, quadratic_minimum):
        structure = quadratic_ctx.structure
        assert subspaces.distance_to_E(structure, quadratic_minimum) < 1e-14
        # every row of the minimum is a multiple of the all-ones functional
        rows = quadratic_minimum[0]
        np.testing.assert_allclose(rows, rows[:, :1] * np.ones((1, 4)), atol=1e-14)

    def test_certify_local_minimum(self, negative_toy_ctx):
        curvature = verify.certify_local_minimum(
            negative_toy_ctx, negative_toy_minimum()
        )
        assert curvature == pytest.approx(NEGATIVE_TOY_E_CURVATURE, abs=1e-5)

    def test_certify_rejects_non_stationary_point(self, quadratic_ctx):
        with pytest.raises(CertificationError, match="Not a stationary point"):
            verify.certify_local_minimum(
                quadratic_ctx, ParamPoint.zeros(quadratic_ctx.structure.shapes)
            )

    def test_certify_rejects_flat_point(self):
        """With blank inputs the risk is constant: stationary but not strict."""
        group = group_core.cyclic_group(4)
        reps = [
            group_core.rotation_rep_on_grid(group, 2, 2, 1),
            group_core.trivial_rep(group, 2),
        ]
        structure = subspaces.EquivariantStructure(
            reps, subspaces.dense_subspace(2, 4)
        )
        arch = Architecture([4, 2], ["identity"], "mse")
        ctx = RiskContext(arch, structure, [LabeledSample(np.zeros(4), np.zeros(2))])
        with pytest.raises(CertificationError, match="Not a strict local minimum"):
            verify.certify_local_minimum(ctx, ParamPoint.zeros(structure.shapes))

    def test_newton_polish(self, negative_toy_ctx):
        start = ParamPoint([[[0.3, 0.3]]])
        X, norm = verify.find_equivariant_stationary(
            negative_toy_ctx, start, max_steps=5, tol=1e-12
        )
        assert norm < 1e-10
        np.testing.assert_allclose(
            X[0], negative_toy_minimum()[0], atol=1e-8
        )


class TestCurvature:
    """Estimates of sigma and of the Hessian Lipschitz constant."""

    def test_sigma_of_quadratic_toy(self, quadratic_ctx):
        lowest = perp_spectrum(quadratic_ctx)[0][0]
        assert verify.estimate_sigma(quadratic_ctx) == pytest.approx(lowest, rel=1e-6)

    @pytest.mark.parametrize("hessian", ["augmented", "nominal"])
    def test_sigma_of_negative_toy(self, negative_toy_ctx, hessian):
        sigma = verify.estimate_sigma(
            negative_toy_ctx, hessian=hessian, points=[negative_toy_minimum()]
        )
        assert sigma == pytest.approx(NEGATIVE_TOY_PERP_CURVATURE, abs=1e-4)

    def test_negative_toy_curvature_along_E(self, negative_toy_ctx):
        u = ParamPoint([np.array([[1.0, 1.0]]) / np.sqrt(2.0)])
        curvature = hvp_augmented(negative_toy_ctx, negative_toy_minimum(), u).inner(u)
        assert curvature == pytest.approx(NEGATIVE_TOY_E_CURVATURE, abs=1e-6)

    def test_sigma_errors(self, quadratic_ctx):
        with pytest.raises(InvalidArgument):
            verify.estimate_sigma(quadratic_ctx, hessian="regularized")

        group = group_core.cyclic_group(1)
        reps = [group_core.trivial_rep(group, 3), group_core.trivial_rep(group, 1)]
        structure = subspaces.EquivariantStructure(
            reps, subspaces.dense_subspace(1, 3)
        )
        arch = Architecture([3, 1], ["identity"], "mse")
        ctx = RiskContext(arch, structure, [LabeledSample(np.ones(3), [0.0])])
        assert structure.perp_dim == 0
        with pytest.raises(InvalidArgument):
            verify.estimate_sigma(ctx)

    def test_lanczos_matches_dense(self, conv_ctx, monkeypatch):
        A = subspaces.random_point_in_E(conv_ctx.structure, np.random.default_rng(3))
        dense = verify.estimate_sigma(conv_ctx, points=[A])
        monkeypatch.setattr(verify.constants, "DENSE_SIGMA_LIMIT", 0)
        lanczos = verify.estimate_sigma(conv_ctx, iters=500, points=[A])
        assert lanczos == pytest.approx(dense, abs=1e-6)

    def test_sigma_ordering(self, conv_ctx):
        report = verify.check_sigma_ordering(conv_ctx, samples=2)
        assert report.passed

    def test_c_vanishes_for_quadratic_risk(self, quadratic_ctx):
        assert verify.estimate_c(quadratic_ctx) < 1e-6


class TestDecayFit:
    """Fitting exponential rates to recorded distances."""

    def test_exact_exponential(self):
        times = np.linspace(0.0, 2.0, 21)
        rate, r_squared = verify.fit_decay_rate(
            synthetic_trajectory(times, 2.0 * np.exp(-3.0 * times))
        )
        assert rate == pytest.approx(-3.0, rel=1e-10)
        assert r_squared == pytest.approx(1.0)

    def test_transient_is_skipped(self):
        times = np.linspace(0.0, 1.0, 11)
        dists = np.exp(-times)
        dists[0] = 100.0
        rate, _ = verify.fit_decay_rate(synthetic_trajectory(times, dists), skip=0.1)
        assert rate == pytest.approx(-1.0, rel=1e-10)

    def test_distances_are_floored(self):
        times = np.linspace(0.0, 1.0, 5)
        rate, r_squared = verify.fit_decay_rate(
            synthetic_trajectory(times, np.zeros(5))
        )
        assert rate == 0.0
        assert r_squared == 0.0

    def test_too_few_records(self):
        with pytest.raises(InvalidArgument):
            verify.fit_decay_rate(synthetic_trajectory([0.0], [1.0]))


class TestAttractor:
    """Decay of the distance to ``E`` under the regularized flow."""

    GAMMAS = (0.5, 2.0, 10.0)

    @pytest.fixture(scope="class")
    def estimates(self, quadratic_ctx):
        _, direction = quadratic_perp_direction(quadratic_ctx)
        config = DynamicsConfig(step_size=0.01, num_steps=150, record_every=5)
        return verify.check_attractor_theorem3(
            quadratic_ctx,
            self.GAMMAS,
            0.1,
            config,
            X0=ParamPoint.zeros(quadratic_ctx.structure.shapes),
            direction=direction,
        )

    def test_one_estimate_per_gamma(self, estimates):
        assert [estimate.gamma for estimate in estimates] == list(self.GAMMAS)
        for estimate in estimates:
            assert estimate.status == "ok"
            assert estimate.trajectory.records[0].dist_E == pytest.approx(0.1)

    def test_rates_match_closed_form(self, quadratic_ctx, estimates):
        """Off ``E`` the flow is linear: the rate is ``-(lambda_min + gamma)``."""
        lowest, _ = quadratic_perp_direction(quadratic_ctx)
        for estimate in estimates:
            expected = -(lowest + estimate.gamma)
            assert verify.check_decay(estimate, expected).passed
            assert estimate.r_squared > 0.999

    def test_constants_of_quadratic_risk(self, quadratic_ctx, estimates):
        lowest, _ = quadratic_perp_direction(quadratic_ctx)
        for estimate in estimates:
            assert estimate.sigma_hat == pytest.approx(lowest, rel=1e-6)
            assert estimate.c_hat < 1e-6
            assert estimate.above_threshold

    def test_gronwall_bound_holds(self, estimates):
        for estimate in estimates:
            report = verify.check_gronwall_bound(estimate)
            assert report.passed
            assert report.name == f"gronwall[{estimate.gamma:g}]"

    def test_no_decay_without_penalty_when_curved_down(self, negative_toy_ctx):
        config = DynamicsConfig(step_size=0.05, num_steps=200, record_every=5)
        (estimate,) = verify.check_attractor_theorem3(
            negative_toy_ctx,
            [0.0],
            0.01,
            config,
            X0=negative_toy_minimum(),
            direction=negative_toy_perp(),
        )
        dist = estimate.trajectory.column("dist_E")
        assert estimate.rate >= -1e-3
        assert dist[-1] > dist[0]
        assert np.isinf(estimate.alpha)

    def test_check_decay_with_nan_rate(self, estimates):
        broken = verify.DecayEstimate(
            1.0, np.nan, 0.0, 0.0, 0.0, 1.0, 0.0, estimates[0].trajectory
        )
        report = verify.check_decay(broken, -1.0)
        assert not report.passed
        assert np.isinf(report.residual)

    def test_gronwall_below_threshold(self, estimates):
        below = verify.DecayEstimate(
            1.0, -1.0, 1.0, -5.0, 0.0, 1.0, 5.0, estimates[0].trajectory
        )
        report = verify.check_gronwall_bound(below)
        assert report.passed
        assert report.residual == 0.0
        assert "not applicable" in report.details

    def test_gronwall_ignores_rounding_noise(self):
        """Distances stuck at rounding level do not count against the bound."""
        times = np.linspace(0.0, 5.0, 51)
        dists = np.maximum(0.1 * np.exp(-101.0 * times), 1e-31)
        estimate = verify.DecayEstimate(
            100.0, -101.0, 1.0, 1.0, 0.0, 1.0, -1.0, synthetic_trajectory(times, dists)
        )
        report = verify.check_gronwall_bound(estimate)
        assert report.passed
        assert report.residual < 1e-8
        assert "48 records at the noise floor" in report.details

    def test_strong_penalty(self, quadratic_ctx):
        lowest, direction = quadratic_perp_direction(quadratic_ctx)
        config = DynamicsConfig(step_size=0.01, num_steps=500, record_every=10)
        (estimate,) = verify.check_attractor_theorem3(
            quadratic_ctx,
            [100.0],
            0.1,
            config,
            X0=ParamPoint.zeros(quadratic_ctx.structure.shapes),
            direction=direction,
        )
        times = estimate.trajectory.column("time")
        assert estimate.trajectory.records[1].step == 10
        assert times[1] == pytest.approx(0.01)
        assert times[-1] * (100.0 + lowest) == pytest.approx(15.0, rel=0.02)
        assert estimate.trajectory.records[-1].dist_E > 1e-9
        assert verify.check_gronwall_bound(estimate).passed
        assert verify.check_decay(estimate, -(lowest + 100.0)).passed

    def test_gronwall_violated(self, estimates):
        """Claiming a faster decay than the one observed breaks the bound."""
        estimate = estimates[0]
        too_fast = verify.DecayEstimate(
            estimate.gamma,
            estimate.rate,
            estimate.r_squared,
            estimate.sigma_hat + 5.0,
            0.0,
            estimate.alpha,
            -estimate.sigma_hat - 5.0,
            estimate.trajectory,
        )
        assert not verify.check_gronwall_bound(too_fast).passed


class TestLocalMinimum:
    """Return to a strict local minimum of the equivariant problem."""

    CONFIG = DynamicsConfig(step_size=0.05, num_steps=400)

    def test_returns_to_minimum(self, quadratic_ctx, quadratic_minimum):
        report = verify.check_remark2_local(
            quadratic_ctx, 1.0, 0.1, self.CONFIG, X_star=quadratic_minimum
        )
        assert report.passed
        assert report.name == "remark2[1]"
        assert report.details.startswith("gamma above threshold ")

    def test_penalty_stabilizes_negative_curvature(self, negative_toy_ctx):
        report = verify.check_remark2_local(
            negative_toy_ctx,
            5.0,
            0.01,
            self.CONFIG,
            X_star=negative_toy_minimum(),
            direction=negative_toy_perp(),
        )
        assert report.passed

    def test_escapes_without_penalty(self, negative_toy_ctx):
        report = verify.check_remark2_local(
            negative_toy_ctx,
            0.0,
            0.01,
            self.CONFIG,
            X_star=negative_toy_minimum(),
            direction=negative_toy_perp(),
        )
        assert not report.passed
        assert report.residual > 0.05
        assert report.details.startswith("gamma below threshold ")

    def test_rejects_non_stationary_point(self, quadratic_ctx):
        with pytest.raises(CertificationError):
            verify.check_remark2_local(
                quadratic_ctx,
                1.0,
                0.1,
                self.CONFIG,
                X_star=ParamPoint.zeros(quadratic_ctx.structure.shapes),
            )


class TestSuite:
    """The complete battery of a network."""

    def test_conv_network(self, conv_ctx):
        config = DynamicsConfig(step_size=0.01, num_steps=20, record_every=5)
        reports = verify.run_suite(
            conv_ctx,
            config,
            gamma_list=(1.0,),
            trials=3,
            samples=1,
            sigma_samples=1,
        )
        names = [report.name for report in reports]
        assert names[:11] == [
            "compatibility",
            "reynolds",
            "gradient_augmented",
            "gradient_nominal",
            "fact_a",
            "fact_a_control",
            "fact_b",
            "lemma_averaging",
            "invariance_augmented",
            "invariance_control",
            "stationarity",
        ]
        assert names[11].startswith("remark2")
        assert names[12:] == ["sigma_ordering", "gronwall[1]"]
        for report in reports:
            assert report.passed, report

    def test_quadratic_network(self, quadratic_ctx):
        config = DynamicsConfig(step_size=0.01, num_steps=300, record_every=10)
        reports = verify.run_suite(
            quadratic_ctx,
            config,
            gamma_list=(1.0,),
            trials=3,
            samples=1,
            sigma_samples=1,
        )
        by_name = {report.name: report for report in reports}
        assert [report.name for report in reports][-5:] == [
            "stationarity",
            "remark2[1]",
            "sigma_ordering",
            "gronwall[1]",
            "decay[1]",
        ]
        assert by_name["stationarity"].details == "agree, stationary"
        assert by_name["remark2[1]"].details.startswith("gamma above threshold ")
        for report in reports:
            assert report.passed, report

    def test_controls_compare_with_mirrored_check(self):
        reference = verify.CheckReport("fact_a", 1e-15, 1e-8)
        strong = verify._control_report(
            "fact_a_control", verify.CheckReport("fact_a", 7e-5, 1e-8), reference
        )
        assert strong.passed
        assert strong.residual == pytest.approx(1e-8 / 7e-5)
        weak = verify._control_report(
            "fact_a_control", verify.CheckReport("fact_a", 1e-9, 1e-8), reference
        )
        assert not weak.passed
        broken = verify.CheckReport("fact_a", np.nan, 1e-8)
        assert not verify._control_report("c", strong, broken).passed

    def test_incompatible_structure_stops_early(self):
        group = group_core.cyclic_group(4)
        rep = group_core.rotation_rep_on_grid(group, 4, 4, 1)
        subspace = subspaces.conv_subspace(4, 4, 1, 1, [(0, 0), (0, 1)])
        structure = subspaces.EquivariantStructure([rep, rep], subspace)
        arch = Architecture([16, 16], ["identity"], "mse")
        rng = np.random.default_rng(0)
        samples = [
            LabeledSample(rng.standard_normal(16), rng.standard_normal(16))
            for _ in range(4)
        ]
        reports = verify.run_suite(
            RiskContext(arch, structure, samples), DynamicsConfig()
        )
        assert [report.name for report in reports] == ["compatibility"]
        assert not reports[0].passed
