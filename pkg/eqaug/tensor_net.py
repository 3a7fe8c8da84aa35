"""Small dense networks without biases and their exact gradients.

A network with layers ``A_0 .. A_{L-1}`` maps ``x_0 = x`` through
``x_{i+1} = sigma_{i+1}(A_i x_i)`` and outputs ``x_L``. Everything runs in
float64. Batches are stacked along the first axis and reductions over a batch
always run over that axis in sample order.
"""

import typing as t

import numpy as np

from .errors import InvalidArgument

__all__ = (
    "NONLINEARITIES",
    "LOSSES",
    "Architecture",
    "ParamPoint",
    "LabeledSample",
    "forward",
    "forward_batch",
    "loss",
    "loss_batch",
    "grad_sample",
    "grad_batch",
)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _identity(z: np.ndarray) -> np.ndarray:
    return z


# Derivatives are expressed through the activation *output*, which is all
# backpropagation keeps around. relu'(0) is 0.
def _tanh_prime(y: np.ndarray) -> np.ndarray:
    return 1.0 - y * y


def _relu_prime(y: np.ndarray) -> np.ndarray:
    return (y > 0.0).astype(np.float64)


def _identity_prime(y: np.ndarray) -> np.ndarray:
    return np.ones_like(y)


ArrayFn = t.Callable[[np.ndarray], np.ndarray]

NONLINEARITIES: t.Dict[str, t.Tuple[ArrayFn, ArrayFn]] = {
    "tanh": (np.tanh, _tanh_prime),
    "relu": (_relu, _relu_prime),
    "identity": (_identity, _identity_prime),
}

LOSSES = ("cross_entropy", "mse")


class Architecture:
    """Shape and nonlinearities of a network.

    Parameters
    ----------
    space_dims: Sequence[:class:`int`]
        ``[dim X_0, ..., dim X_L]``.
    nonlinearities: Sequence[:class:`str`]
        Tags of ``sigma_1 .. sigma_L``, each one of :data:`NONLINEARITIES`.
    loss: :class:`str`
        ``"cross_entropy"`` or ``"mse"``.
    """

    __slots__ = ("space_dims", "nonlinearities", "loss")

    def __init__(
        self,
        space_dims: t.Sequence[int],
        nonlinearities: t.Sequence[str],
        loss: str = "cross_entropy",
    ) -> None:
        """Initialize and validate the architecture.

        :raise InvalidArgument: Inconsistent lengths, non-positive dimensions
            or unknown tags
        """
        dims = tuple(int(d) for d in space_dims)
        tags = tuple(nonlinearities)
        if len(dims) < 2 or min(dims) < 1:
            raise InvalidArgument(f"Invalid space dimensions {dims}")
        if len(tags) != len(dims) - 1:
            raise InvalidArgument(
                f"{len(dims) - 1} layers need as many nonlinearities, got {len(tags)}"
            )
        unknown = [tag for tag in tags if tag not in NONLINEARITIES]
        if unknown:
            raise InvalidArgument(f"Unknown nonlinearities: {unknown}")
        if loss not in LOSSES:
            raise InvalidArgument(f"Unknown loss {loss!r}")
        self.space_dims = dims
        self.nonlinearities = tags
        self.loss = loss

    @property
    def num_layers(self) -> int:
        """Number ``L`` of linear layers."""
        return len(self.nonlinearities)

    @property
    def layer_shapes(self) -> t.List[t.Tuple[int, int]]:
        """Shape ``(dim X_{i+1}, dim X_i)`` of every layer."""
        return [
            (self.space_dims[i + 1], self.space_dims[i]) for i in range(self.num_layers)
        ]

    def __repr__(self) -> str:
        return (
            f"<Architecture dims={list(self.space_dims)} "
            f"sigma={list(self.nonlinearities)} loss={self.loss}>"
        )


class ParamPoint:
    """A tuple of layer matrices ``(A_0, ..., A_{L-1})``.

    ParamPoints form a Euclidean space with the inner product
    ``sum_i trace(A_i^T B_i)``. Arithmetic returns new points, the layers of
    an existing point are never modified in place.

    Attributes
    ----------
    layers: Tuple[:class:`numpy.ndarray`, ...]
        The layer matrices.
    """

    __slots__ = ("layers",)

    def __init__(self, layers: t.Iterable[t.Any]) -> None:
        self.layers = tuple(np.asarray(layer, dtype=np.float64) for layer in layers)

    @classmethod
    def zeros(cls, shapes: t.Sequence[t.Tuple[int, int]]) -> "ParamPoint":
        """The origin of the space with the given layer shapes."""
        return cls(np.zeros(shape) for shape in shapes)

    @classmethod
    def from_vector(
        cls, vector: np.ndarray, shapes: t.Sequence[t.Tuple[int, int]]
    ) -> "ParamPoint":
        """Inverse of :meth:`to_vector`.

        :param vector: Concatenation of the row-major flattened layers
        :type vector: :class:`numpy.ndarray`
        :param shapes: Layer shapes
        :type shapes: Sequence[Tuple[int, int]]
        :return: The point
        :rtype: :class:`ParamPoint`
        """
        sizes = [rows * cols for rows, cols in shapes]
        if vector.shape != (sum(sizes),):
            raise InvalidArgument(
                f"Vector of shape {vector.shape} does not fit shapes {list(shapes)}"
            )
        offsets = np.cumsum([0] + sizes)
        return cls(
            vector[offsets[i] : offsets[i + 1]].reshape(shape)
            for i, shape in enumerate(shapes)
        )

    @property
    def shapes(self) -> t.List[t.Tuple[int, int]]:
        """Shape of every layer."""
        return [layer.shape for layer in self.layers]  # type: ignore

    def to_vector(self) -> np.ndarray:
        """Concatenate the row-major flattened layers."""
        return np.concatenate([layer.reshape(-1) for layer in self.layers])

    def inner(self, other: "ParamPoint") -> float:
        """Frobenius inner product summed over the layers."""
        self._check_shapes(other)
        return float(sum(np.vdot(a, b) for a, b in zip(self.layers, other.layers)))

    def norm(self) -> float:
        """Norm induced by :meth:`inner`."""
        return float(np.sqrt(sum(np.vdot(a, a) for a in self.layers)))

    def zeros_like(self) -> "ParamPoint":
        return ParamPoint(np.zeros_like(layer) for layer in self.layers)

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(layer))) for layer in self.layers)

    def _check_shapes(self, other: "ParamPoint") -> None:
        if self.shapes != other.shapes:
            raise InvalidArgument(f"Shape mismatch: {self.shapes} != {other.shapes}")

    def __add__(self, other: "ParamPoint") -> "ParamPoint":
        self._check_shapes(other)
        return ParamPoint(a + b for a, b in zip(self.layers, other.layers))

    def __sub__(self, other: "ParamPoint") -> "ParamPoint":
        self._check_shapes(other)
        return ParamPoint(a - b for a, b in zip(self.layers, other.layers))

    def __neg__(self) -> "ParamPoint":
        return ParamPoint(-a for a in self.layers)

    def __mul__(self, scalar: float) -> "ParamPoint":
        return ParamPoint(scalar * a for a in self.layers)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ParamPoint":
        return ParamPoint(a / scalar for a in self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.layers[index]

    def __iter__(self) -> t.Iterator[np.ndarray]:
        return iter(self.layers)

    def __repr__(self) -> str:
        return f"<ParamPoint shapes={self.shapes} norm={self.norm():.4g}>"


class LabeledSample:
    """One training pair ``(x, y)``.

    Attributes
    ----------
    input: :class:`numpy.ndarray`
        Vector of ``X_0``.
    target: :class:`numpy.ndarray`
        Vector of ``X_L``, one-hot for classification.
    """

    __slots__ = ("input", "target")

    # pylint: disable=redefined-builtin
    def __init__(self, input: t.Any, target: t.Any) -> None:
        self.input = np.asarray(input, dtype=np.float64)
        self.target = np.asarray(target, dtype=np.float64)

    def __repr__(self) -> str:
        return f"<LabeledSample in={self.input.shape} out={self.target.shape}>"


def _check_layers(arch: Architecture, A: ParamPoint) -> None:
    if A.shapes != arch.layer_shapes:
        raise InvalidArgument(
            f"Layer shapes {A.shapes} do not match the architecture {arch.layer_shapes}"
        )


def forward_batch(
    arch: Architecture, A: ParamPoint, inputs: np.ndarray
) -> t.List[np.ndarray]:
    """Run a batch through the network.

    :param arch: Network architecture
    :type arch: :class:`Architecture`
    :param A: Layers
    :type A: :class:`ParamPoint`
    :param inputs: ``n x dim X_0`` batch
    :type inputs: :class:`numpy.ndarray`
    :return: Activations ``[x_0, ..., x_L]``, each of shape ``n x dim X_i``
    :rtype: List[:class:`numpy.ndarray`]
    :raise InvalidArgument: Dimension mismatch
    """
    _check_layers(arch, A)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != arch.space_dims[0]:
        raise InvalidArgument(
            f"Expected inputs of dimension {arch.space_dims[0]}, got {inputs.shape}"
        )
    activations = [inputs]
    for layer, tag in zip(A.layers, arch.nonlinearities):
        sigma = NONLINEARITIES[tag][0]
        activations.append(sigma(activations[-1] @ layer.T))
    return activations


def forward(
    arch: Architecture, A: ParamPoint, x: np.ndarray
) -> t.Tuple[np.ndarray, t.List[np.ndarray]]:
    """Evaluate ``Phi_A(x)`` for a single input.

    :param arch: Network architecture
    :type arch: :class:`Architecture`
    :param A: Layers
    :type A: :class:`ParamPoint`
    :param x: Input vector
    :type x: :class:`numpy.ndarray`
    :return: The output ``x_L`` and all activations ``[x_0, ..., x_L]``
    :rtype: Tuple[:class:`numpy.ndarray`, List[:class:`numpy.ndarray`]]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument(f"Expected a vector, got shape {x.shape}")
    activations = [a[0] for a in forward_batch(arch, A, x[None, :])]
    return activations[-1], activations


def _check_targets(outputs: np.ndarray, targets: np.ndarray) -> None:
    if outputs.shape != targets.shape:
        raise InvalidArgument(
            f"Output shape {outputs.shape} does not match target shape {targets.shape}"
        )


def loss_batch(
    arch: Architecture, outputs: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Per-sample loss of a batch.

    ``cross_entropy`` reads the outputs as logits and applies a max-shifted
    softmax; ``mse`` is half the squared Euclidean distance.

    :return: Vector of ``n`` losses
    :rtype: :class:`numpy.ndarray`
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_targets(outputs, targets)
    if arch.loss == "mse":
        residual = outputs - targets
        return 0.5 * np.sum(residual * residual, axis=-1)

    shifted = outputs - np.max(outputs, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return -np.sum(targets * (shifted - log_norm), axis=-1)


def loss(arch: Architecture, output: np.ndarray, target: np.ndarray) -> float:
    """Loss ``l(output, target)`` of a single sample."""
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.ndim != 1:
        raise InvalidArgument(f"Expected a vector, got shape {output.shape}")
    return float(loss_batch(arch, output[None, :], target[None, :])[0])


def _loss_output_grad(
    arch: Architecture, outputs: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    if arch.loss == "mse":
        return outputs - targets
    shifted = outputs - np.max(outputs, axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= np.sum(probs, axis=-1, keepdims=True)
    return probs * np.sum(targets, axis=-1, keepdims=True) - targets


def grad_batch(
    arch: Architecture,
    A: ParamPoint,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> t.Tuple[float, ParamPoint]:
    """Mean loss and mean gradient over a batch, by reverse-mode sweep.

    :param arch: Network architecture
    :type arch: :class:`Architecture`
    :param A: Layers
    :type A: :class:`ParamPoint`
    :param inputs: ``n x dim X_0`` batch
    :type inputs: :class:`numpy.ndarray`
    :param targets: ``n x dim X_L`` batch
    :type targets: :class:`numpy.ndarray`
    :return: Mean loss and ``d(mean loss)/dA``
    :rtype: Tuple[float, :class:`ParamPoint`]
    """
    activations = forward_batch(arch, A, inputs)
    targets = np.asarray(targets, dtype=np.float64)
    _check_targets(activations[-1], targets)
    count = inputs.shape[0]
    mean_loss = float(np.mean(loss_batch(arch, activations[-1], targets)))

    # delta holds dl/dz for the pre-activation z = A_i x_i of the current layer
    delta = _loss_output_grad(arch, activations[-1], targets)
    delta = delta * NONLINEARITIES[arch.nonlinearities[-1]][1](activations[-1])
    grads: t.List[np.ndarray] = [np.empty(0)] * arch.num_layers
    for i in reversed(range(arch.num_layers)):
        grads[i] = delta.T @ activations[i] / count
        if i > 0:
            prime = NONLINEARITIES[arch.nonlinearities[i - 1]][1]
            delta = (delta @ A.layers[i]) * prime(activations[i])
    return mean_loss, ParamPoint(grads)


def grad_sample(arch: Architecture, A: ParamPoint, sample: LabeledSample) -> ParamPoint:
    """Gradient of ``l(Phi_A(x), y)`` with respect to every layer.

    :param arch: Network architecture
    :type arch: :class:`Architecture`
    :param A: Layers
    :type A: :class:`ParamPoint`
    :param sample: The pair ``(x, y)``
    :type sample: :class:`LabeledSample`
    :return: ``dl/dA``
    :rtype: :class:`ParamPoint`
    """
    return grad_batch(arch, A, sample.input[None, :], sample.target[None, :])[1]
