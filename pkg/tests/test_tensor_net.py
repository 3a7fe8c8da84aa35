"""Forward passes, losses and reverse-mode gradients."""

import numpy as np
import pytest

from eqaug.errors import InvalidArgument
from eqaug.tensor_net import (
    Architecture,
    LabeledSample,
    ParamPoint,
    forward,
    forward_batch,
    grad_batch,
    grad_sample,
    loss,
    loss_batch,
)


def random_point(arch, rng):
    return ParamPoint(rng.standard_normal(shape) * 0.5 for shape in arch.layer_shapes)


def finite_difference_gradient(arch, A, x, y, eps=1e-5):
    """Central differences over every coordinate of every layer."""
    layers = []
    for index, layer in enumerate(A.layers):
        grad = np.zeros_like(layer)
        for entry in np.ndindex(layer.shape):
            plus = [a.copy() for a in A.layers]
            minus = [a.copy() for a in A.layers]
            plus[index][entry] += eps
            minus[index][entry] -= eps
            up = loss(arch, forward(arch, ParamPoint(plus), x)[0], y)
            down = loss(arch, forward(arch, ParamPoint(minus), x)[0], y)
            grad[entry] = (up - down) / (2.0 * eps)
        layers.append(grad)
    return ParamPoint(layers)


class TestArchitecture:
    """Validation of the network description."""

    def test_layer_shapes(self):
        arch = Architecture([9, 8, 4], ["tanh", "identity"])
        assert arch.num_layers == 2
        assert arch.layer_shapes == [(8, 9), (4, 8)]

    @pytest.mark.parametrize(
        "dims,tags,loss_name",
        [
            ([3], [], "mse"),
            ([3, 0], ["tanh"], "mse"),
            ([3, 2], ["tanh", "tanh"], "mse"),
            ([3, 2], ["softplus"], "mse"),
            ([3, 2], ["tanh"], "hinge"),
        ],
    )
    def test_invalid(self, dims, tags, loss_name):
        with pytest.raises(InvalidArgument):
            Architecture(dims, tags, loss_name)


class TestParamPoint:
    """Vector space operations on layer tuples."""

    def test_arithmetic(self, rng):
        A = ParamPoint([rng.standard_normal((2, 3)), rng.standard_normal((1, 2))])
        B = ParamPoint([rng.standard_normal((2, 3)), rng.standard_normal((1, 2))])
        np.testing.assert_allclose((A + B - B).to_vector(), A.to_vector())
        np.testing.assert_allclose((2.0 * A).to_vector(), (A * 2.0).to_vector())
        np.testing.assert_allclose((A / 4.0).to_vector(), 0.25 * A.to_vector())
        np.testing.assert_allclose((-A).to_vector(), -A.to_vector())

    def test_inner_product_and_norm(self, rng):
        A = ParamPoint([rng.standard_normal((2, 3)), rng.standard_normal((1, 2))])
        B = ParamPoint([rng.standard_normal((2, 3)), rng.standard_normal((1, 2))])
        assert A.inner(B) == pytest.approx(np.dot(A.to_vector(), B.to_vector()))
        assert A.norm() == pytest.approx(np.linalg.norm(A.to_vector()))

    def test_vector_layout(self):
        A = ParamPoint.from_vector(np.arange(8.0), [(2, 3), (1, 2)])
        np.testing.assert_array_equal(A[0], [[0, 1, 2], [3, 4, 5]])
        np.testing.assert_array_equal(A[1], [[6, 7]])
        assert A.shapes == [(2, 3), (1, 2)]
        assert len(A) == 2

    def test_mismatched_shapes(self):
        A = ParamPoint.zeros([(2, 3)])
        B = ParamPoint.zeros([(3, 2)])
        with pytest.raises(InvalidArgument):
            A + B
        with pytest.raises(InvalidArgument):
            A.inner(B)
        with pytest.raises(InvalidArgument):
            ParamPoint.from_vector(np.zeros(5), [(2, 3)])

    def test_operations_do_not_alias(self):
        A = ParamPoint.zeros([(2, 2)])
        B = A + A
        B.layers[0][0, 0] = 1.0
        assert A[0][0, 0] == 0.0

    def test_finiteness(self):
        assert ParamPoint.zeros([(2, 2)]).is_finite()
        assert not ParamPoint([np.array([[np.inf]])]).is_finite()


class TestForward:
    """Evaluation of ``Phi_A``."""

    def test_identity_network(self, rng):
        arch = Architecture([3, 3, 3], ["identity", "identity"], "mse")
        A = ParamPoint([np.eye(3), np.eye(3)])
        x = rng.standard_normal(3)
        np.testing.assert_array_equal(forward(arch, A, x)[0], x)

    def test_zero_layer_gives_zero(self, rng):
        arch = Architecture([1, 1], ["tanh"], "mse")
        A = ParamPoint([[[0.0]]])
        output, activations = forward(arch, A, rng.standard_normal(1))
        np.testing.assert_array_equal(output, [0.0])
        assert len(activations) == 2

    def test_matches_explicit_recursion(self, rng):
        arch = Architecture([5, 4, 3], ["tanh", "relu"], "mse")
        A = random_point(arch, rng)
        x = rng.standard_normal(5)
        expected = np.maximum(A[1] @ np.tanh(A[0] @ x), 0.0)
        np.testing.assert_allclose(forward(arch, A, x)[0], expected, atol=1e-12)

    def test_batch_matches_single(self, rng):
        arch = Architecture([5, 4, 3], ["tanh", "identity"], "mse")
        A = random_point(arch, rng)
        inputs = rng.standard_normal((7, 5))
        outputs = forward_batch(arch, A, inputs)[-1]
        for x, output in zip(inputs, outputs):
            np.testing.assert_allclose(forward(arch, A, x)[0], output, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        arch = Architecture([5, 3], ["tanh"], "mse")
        A = random_point(arch, rng)
        with pytest.raises(InvalidArgument):
            forward(arch, A, np.zeros(4))
        with pytest.raises(InvalidArgument):
            forward(arch, ParamPoint.zeros([(3, 4)]), np.zeros(5))


class TestLoss:
    """Per-sample losses."""

    def test_mse_at_target_is_zero(self):
        arch = Architecture([2, 3], ["identity"], "mse")
        assert loss(arch, np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_mse_is_half_squared_distance(self):
        arch = Architecture([2, 2], ["identity"], "mse")
        assert loss(arch, np.array([3.0, 0.0]), np.array([0.0, 4.0])) == 12.5

    @pytest.mark.parametrize("classes", [2, 4, 10])
    def test_uniform_logits(self, classes):
        arch = Architecture([2, classes], ["identity"])
        target = np.eye(classes)[0]
        value = loss(arch, np.full(classes, 3.7), target)
        assert value == pytest.approx(np.log(classes), abs=1e-12)

    def test_cross_entropy_survives_large_logits(self):
        arch = Architecture([2, 2], ["identity"])
        value = loss(arch, np.array([1000.0, 0.0]), np.array([0.0, 1.0]))
        assert value == pytest.approx(1000.0)

    def test_batch_losses(self, rng):
        arch = Architecture([2, 3], ["identity"])
        outputs = rng.standard_normal((4, 3))
        targets = np.eye(3)[[0, 2, 1, 1]]
        expected = [loss(arch, o, y) for o, y in zip(outputs, targets)]
        np.testing.assert_allclose(loss_batch(arch, outputs, targets), expected)

    def test_target_shape_mismatch(self):
        arch = Architecture([2, 3], ["identity"])
        with pytest.raises(InvalidArgument):
            loss(arch, np.zeros(3), np.zeros(2))


class TestGradients:
    """Reverse mode sweep against finite differences and closed forms."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("loss_name", ["cross_entropy", "mse"])
    def test_matches_finite_differences(self, seed, loss_name):
        rng = np.random.default_rng(seed)
        arch = Architecture([9, 8, 4], ["tanh", "identity"], loss_name)
        A = random_point(arch, rng)
        x = rng.standard_normal(9)
        y = np.eye(4)[seed] if loss_name == "cross_entropy" else rng.standard_normal(4)
        analytic = grad_sample(arch, A, LabeledSample(x, y))
        numeric = finite_difference_gradient(arch, A, x, y)
        error = (analytic - numeric).norm() / numeric.norm()
        assert error < 1e-5

    def test_zero_input_gives_zero_gradient(self):
        arch = Architecture([3, 4, 2], ["tanh", "identity"], "mse")
        A = random_point(arch, np.random.default_rng(0))
        grad = grad_sample(arch, A, LabeledSample(np.zeros(3), np.zeros(2)))
        assert grad.norm() == 0.0

    def test_linear_least_squares(self, rng):
        arch = Architecture([3, 2], ["identity"], "mse")
        A = random_point(arch, rng)
        x, y = rng.standard_normal(3), rng.standard_normal(2)
        grad = grad_sample(arch, A, LabeledSample(x, y))
        np.testing.assert_allclose(grad[0], np.outer(A[0] @ x - y, x), atol=1e-14)

    def test_batch_gradient_is_mean(self, rng):
        arch = Architecture([4, 3, 2], ["tanh", "identity"])
        A = random_point(arch, rng)
        inputs = rng.standard_normal((5, 4))
        targets = np.eye(2)[[0, 1, 1, 0, 1]]
        mean_loss, grad = grad_batch(arch, A, inputs, targets)
        samples = [LabeledSample(x, y) for x, y in zip(inputs, targets)]
        expected = sum(
            (grad_sample(arch, A, sample) for sample in samples[1:]),
            grad_sample(arch, A, samples[0]),
        ) / len(samples)
        np.testing.assert_allclose(grad.to_vector(), expected.to_vector(), atol=1e-14)
        outputs = forward_batch(arch, A, inputs)[-1]
        assert mean_loss == pytest.approx(np.mean(loss_batch(arch, outputs, targets)))
