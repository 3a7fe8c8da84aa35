"""Architecture subspaces, equivariant maps and the projections between them.

``L`` is the space of admissible layer tuples (dense layers, circular
convolutions, ...), ``H_G`` the space of layer tuples commuting with the
group action and ``E = H_G ∩ L``. Everything here is linear: ``L`` always
passes through the origin, so ``T L = L`` and ``T E = E``.

Subspaces are stored per layer as orthonormal row bases in the row-major
flattened coordinates of the layer. A layer whose subspace is the whole of
``Hom(X_i, X_{i+1})`` stores ``None`` and is never materialized.
"""

import typing as t

import numpy as np
from scipy import linalg

from . import constants
from .errors import CompatibilityError, InvalidArgument
from .group_core import Representation
from .tensor_net import ParamPoint

__all__ = (
    "SUPPORTS",
    "AffineSubspace",
    "EquivariantStructure",
    "gram_schmidt",
    "parse_support",
    "dense_subspace",
    "conv_subspace",
    "group_action",
    "reynolds",
    "project_L",
    "project_E",
    "project_E_perp",
    "distance_to_E",
    "check_compatibility",
    "random_point_in_E",
    "random_perp_direction",
    "init_equivariant",
)

Shape = t.Tuple[int, int]
Block = t.Optional[np.ndarray]

SUPPORTS: t.Dict[str, t.List[t.Tuple[int, int]]] = {
    "full3x3": [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)],
    "cross": [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)],
}


def gram_schmidt(
    vectors: np.ndarray, drop: float = constants.GRAM_SCHMIDT_DROP
) -> np.ndarray:
    """Orthonormalize rows by modified Gram-Schmidt, dropping dependent ones.

    Each candidate is orthogonalized twice against the accepted rows, in row
    order, so the result only depends on the input order.

    :param vectors: ``k x d`` candidates
    :type vectors: :class:`numpy.ndarray`
    :param drop: Residual norm under which a candidate is dropped
    :type drop: float
    :return: ``r x d`` orthonormal rows spanning the candidates
    :rtype: :class:`numpy.ndarray`
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    accepted: t.List[np.ndarray] = []
    for candidate in vectors:
        v = candidate.copy()
        for _ in range(2):
            for q in accepted:
                v -= np.dot(q, v) * q
        norm = np.linalg.norm(v)
        if norm > drop:
            accepted.append(v / norm)
    if not accepted:
        return np.zeros((0, vectors.shape[1]))
    return np.array(accepted)


def _project_layer(block: Block, layer: np.ndarray) -> np.ndarray:
    if block is None:
        return layer.copy()
    flat = layer.reshape(-1)
    return (block.T @ (block @ flat)).reshape(layer.shape)


def _blocks_to_point(
    blocks: t.Sequence[np.ndarray], shapes: t.Sequence[Shape], coeffs: np.ndarray
) -> ParamPoint:
    layers = []
    start = 0
    for block, shape in zip(blocks, shapes):
        stop = start + block.shape[0]
        layers.append((coeffs[start:stop] @ block).reshape(shape))
        start = stop
    return ParamPoint(layers)


def _point_to_blocks(blocks: t.Sequence[np.ndarray], A: ParamPoint) -> np.ndarray:
    return np.concatenate(
        [block @ layer.reshape(-1) for block, layer in zip(blocks, A.layers)]
    )


class AffineSubspace:
    """Product of per-layer subspaces, the architecture subspace ``L``.

    Parameters
    ----------
    shapes: Sequence[Tuple[:class:`int`, :class:`int`]]
        Shape of every layer.
    blocks: Sequence[Optional[:class:`numpy.ndarray`]]
        Orthonormal row basis of each layer's subspace, ``None`` for the
        whole space of that layer.
    offset: Optional[:class:`ParamPoint`]
        Offset of the affine subspace, the origin when omitted.

    Attributes
    ----------
    shapes: List[Tuple[:class:`int`, :class:`int`]]
        Layer shapes.
    blocks: Tuple[Optional[:class:`numpy.ndarray`], ...]
        Per-layer orthonormal bases.
    offset: :class:`ParamPoint`
        Offset of the subspace.
    """

    __slots__ = ("shapes", "blocks", "offset")

    def __init__(
        self,
        shapes: t.Sequence[Shape],
        blocks: t.Sequence[Block],
        offset: t.Optional[ParamPoint] = None,
    ) -> None:
        """Initialize the subspace and check orthonormality of the blocks.

        :raise InvalidArgument: Mismatched shapes or non-orthonormal blocks
        """
        shapes = [(int(rows), int(cols)) for rows, cols in shapes]
        if len(blocks) != len(shapes):
            raise InvalidArgument("One basis block is needed per layer")
        checked: t.List[Block] = []
        for shape, block in zip(shapes, blocks):
            if block is not None:
                block = np.asarray(block, dtype=np.float64)
                if block.ndim != 2 or block.shape[1] != shape[0] * shape[1]:
                    raise InvalidArgument(
                        f"Basis block of shape {block.shape} does not fit layer {shape}"
                    )
                gram = block @ block.T
                if not np.allclose(gram, np.eye(block.shape[0]), rtol=0.0, atol=1e-12):
                    raise InvalidArgument("Basis blocks must have orthonormal rows")
                block.setflags(write=False)
            checked.append(block)
        if offset is None:
            offset = ParamPoint.zeros(shapes)
        elif offset.shapes != shapes:
            raise InvalidArgument("The offset does not match the layer shapes")

        self.shapes = shapes
        self.blocks = tuple(checked)
        self.offset = offset

    @classmethod
    def product(cls, *subspaces: "AffineSubspace") -> "AffineSubspace":
        """Concatenate the layers of several subspaces.

        :return: The product subspace
        :rtype: :class:`AffineSubspace`
        """
        shapes: t.List[Shape] = []
        blocks: t.List[Block] = []
        offsets: t.List[np.ndarray] = []
        for subspace in subspaces:
            shapes.extend(subspace.shapes)
            blocks.extend(subspace.blocks)
            offsets.extend(subspace.offset.layers)
        return cls(shapes, blocks, ParamPoint(offsets))

    @property
    def dim(self) -> int:
        """Dimension of the tangent space ``T L``."""
        return sum(
            rows * cols if block is None else block.shape[0]
            for (rows, cols), block in zip(self.shapes, self.blocks)
        )

    def explicit_blocks(self) -> t.List[np.ndarray]:
        """Per-layer bases with ``None`` expanded to the canonical basis."""
        return [
            np.eye(rows * cols) if block is None else block
            for (rows, cols), block in zip(self.shapes, self.blocks)
        ]

    @property
    def tangent_basis(self) -> t.List[ParamPoint]:
        """Orthonormal basis of ``T L`` as a list of points."""
        basis = []
        zero = ParamPoint.zeros(self.shapes)
        for index, block in enumerate(self.explicit_blocks()):
            for row in block:
                layers = list(zero.layers)
                layers[index] = row.reshape(self.shapes[index])
                basis.append(ParamPoint(layers))
        return basis

    def project_tangent(self, V: ParamPoint) -> ParamPoint:
        """Orthogonal projection of a direction onto ``T L``."""
        return ParamPoint(
            _project_layer(block, layer) for block, layer in zip(self.blocks, V.layers)
        )

    def project(self, A: ParamPoint) -> ParamPoint:
        """Orthogonal projection of a point onto ``L``."""
        return self.offset + self.project_tangent(A - self.offset)

    def __repr__(self) -> str:
        return f"<AffineSubspace layers={len(self.shapes)} dim={self.dim}>"


def dense_subspace(out_dim: int, in_dim: int) -> AffineSubspace:
    """The whole space of ``out_dim x in_dim`` matrices (a fully connected layer)."""
    return AffineSubspace([(out_dim, in_dim)], [None])


def parse_support(
    support: t.Union[str, t.Sequence[t.Sequence[int]]]
) -> t.List[t.Tuple[int, int]]:
    """Resolve a named support (``"full3x3"``, ``"cross"``) or a tap list.

    :raise InvalidArgument: Unknown name
    """
    if isinstance(support, str):
        if support not in SUPPORTS:
            raise InvalidArgument(
                f"Unknown support {support!r}, expected one of {sorted(SUPPORTS)}"
            )
        return list(SUPPORTS[support])
    return [(int(dr), int(dc)) for dr, dc in support]


def conv_subspace(
    height: int,
    width: int,
    in_ch: int,
    out_ch: int,
    support: t.Union[str, t.Sequence[t.Sequence[int]]],
    padding: str = "circular",
) -> AffineSubspace:
    """Circular convolutions between ``h x w`` multi-channel images.

    One operator per (input channel, output channel, tap) is built, with
    ``(K x)[(r, c), o] = x[((r + dr) mod h, (c + dc) mod w), i]``, and the
    operators are orthonormalized in that order.

    :param height: Grid height
    :type height: int
    :param width: Grid width
    :type width: int
    :param in_ch: Input channels
    :type in_ch: int
    :param out_ch: Output channels
    :type out_ch: int
    :param support: Tap offsets ``(dr, dc)`` or a named support
    :type support: Union[str, Sequence[Sequence[int]]]
    :param padding: Only ``"circular"`` is supported
    :type padding: str
    :return: The single-layer subspace
    :rtype: :class:`AffineSubspace`
    :raise InvalidArgument: Duplicate or out of range taps, other paddings
    """
    if padding != "circular":
        raise InvalidArgument(f"Unsupported padding {padding!r}")
    if min(height, width, in_ch, out_ch) < 1:
        raise InvalidArgument("Grid and channel sizes must be positive")
    taps = parse_support(support)
    if len(set(taps)) != len(taps):
        raise InvalidArgument(f"Duplicate taps in support {taps}")
    for dr, dc in taps:
        if abs(dr) >= height or abs(dc) >= width:
            raise InvalidArgument(
                f"Tap {(dr, dc)} does not fit a {height}x{width} grid"
            )

    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    pixels = (rows * width + cols).reshape(-1)
    out_dim, in_dim = height * width * out_ch, height * width * in_ch
    candidates = []
    for i in range(in_ch):
        for o in range(out_ch):
            for dr, dc in taps:
                source = ((rows + dr) % height) * width + (cols + dc) % width
                source = source.reshape(-1)
                operator = np.zeros((out_dim, in_dim))
                operator[pixels * out_ch + o, source * in_ch + i] = 1.0
                candidates.append(operator.reshape(-1))
    return AffineSubspace([(out_dim, in_dim)], [gram_schmidt(np.array(candidates))])


class EquivariantStructure:
    """Representations on every network space together with ``L`` and ``E``.

    Parameters
    ----------
    reps: Sequence[:class:`Representation`]
        ``rho_0 .. rho_L``, one per network space, all of the same group.
    subspace: :class:`AffineSubspace`
        The architecture subspace ``L``; it must pass through the origin.

    Attributes
    ----------
    reps: Tuple[:class:`Representation`, ...]
        The representations.
    subspace: :class:`AffineSubspace`
        The architecture subspace.
    e_blocks: Tuple[:class:`numpy.ndarray`, ...]
        Per-layer orthonormal bases of ``T E``.
    commutator_norm: :class:`float`
        Spectral norm of ``Pi_L Pi_G - Pi_G Pi_L``.
    """

    __slots__ = ("reps", "subspace", "e_blocks", "commutator_norm", "_cache")

    def __init__(
        self, reps: t.Sequence[Representation], subspace: AffineSubspace
    ) -> None:
        """Build the ``T E`` basis and measure compatibility.

        The ``T E`` basis is the Reynolds image of the ``T L`` basis,
        orthonormalized by :func:`gram_schmidt`.

        :raise InvalidArgument: Mismatched dimensions, different groups, or
            an offset away from the origin
        """
        reps = tuple(reps)
        if len(reps) != len(subspace.shapes) + 1:
            raise InvalidArgument(
                f"{len(subspace.shapes)} layers need {len(subspace.shapes) + 1} "
                f"representations, got {len(reps)}"
            )
        if any(rep.group != reps[0].group for rep in reps):
            raise InvalidArgument("All representations must be of the same group")
        for index, (rows, cols) in enumerate(subspace.shapes):
            if (reps[index + 1].dim, reps[index].dim) != (rows, cols):
                raise InvalidArgument(
                    f"Layer {index} of shape {(rows, cols)} does not map "
                    f"{reps[index].dim} to {reps[index + 1].dim} dimensions"
                )
        if subspace.offset.norm() != 0.0:
            raise InvalidArgument("Only subspaces through the origin are supported")

        self.reps = reps
        self.subspace = subspace
        self._cache: t.Dict[str, t.Any] = {}
        self.e_blocks = tuple(
            self._e_block(index) for index in range(len(subspace.shapes))
        )
        self.commutator_norm = max(
            [self._layer_commutator(index) for index in range(len(subspace.shapes))],
            default=0.0,
        )

    @property
    def group(self):
        """The acting group."""
        return self.reps[0].group

    @property
    def shapes(self) -> t.List[Shape]:
        return self.subspace.shapes

    @property
    def e_dim(self) -> int:
        """Dimension of ``T E``."""
        return sum(block.shape[0] for block in self.e_blocks)

    @property
    def perp_dim(self) -> int:
        """Dimension of ``T E-perp`` inside ``T L``."""
        return self.subspace.dim - self.e_dim

    @property
    def compatible(self) -> bool:
        return self.commutator_norm < constants.COMPATIBILITY_TOLERANCE

    def conjugate_stack(self, index: int, g: int, stack: np.ndarray) -> np.ndarray:
        """Apply ``rho_{i+1}(g)^-1 M rho_i(g)`` to a stack of layer matrices.

        :param index: Layer index ``i``
        :type index: int
        :param g: Group element
        :type g: int
        :param stack: ``k x m x n`` matrices, or a single ``m x n`` matrix
        :type stack: :class:`numpy.ndarray`
        :return: The conjugated matrices
        :rtype: :class:`numpy.ndarray`
        """
        rep_in, rep_out = self.reps[index], self.reps[index + 1]
        if rep_in.permutations is not None and rep_out.permutations is not None:
            g_inv = self.group.inverse(g)
            rows = rep_out.permutations[g_inv]
            cols = rep_in.permutations[g_inv]
            return stack[..., rows[:, None], cols[None, :]]
        return rep_out(g).T @ stack @ rep_in(g)

    def reynolds_stack(self, index: int, stack: np.ndarray) -> np.ndarray:
        """Group average of :meth:`conjugate_stack`, summed in element order."""
        total = np.zeros_like(stack, dtype=np.float64)
        for g in self.group.elements():
            total += self.conjugate_stack(index, g, stack)
        return total / self.group.order

    def _e_block(self, index: int) -> np.ndarray:
        rows, cols = self.subspace.shapes[index]
        block = self.subspace.blocks[index]
        rep_in, rep_out = self.reps[index], self.reps[index + 1]
        permuted = rep_in.permutations is not None and rep_out.permutations is not None
        if block is None and permuted:
            # equivariant maps between permutation representations are
            # spanned by the indicators of the entry orbits
            images = rep_out.permutations[:, :, None] * cols
            images = (images + rep_in.permutations[:, None, :]).reshape(
                self.group.order, -1
            )
            labels = np.unique(images.min(axis=0), return_inverse=True)[1]
            basis = np.zeros((labels.max() + 1, rows * cols))
            basis[labels, np.arange(rows * cols)] = 1.0
            return basis / np.linalg.norm(basis, axis=1, keepdims=True)
        if block is None:
            block = np.eye(rows * cols)
        averaged = self.reynolds_stack(index, block.reshape(-1, rows, cols))
        return gram_schmidt(averaged.reshape(block.shape[0], -1))

    def _layer_commutator(self, index: int) -> float:
        block = self.subspace.blocks[index]
        if block is None:
            return 0.0
        rows, cols = self.subspace.shapes[index]
        size = rows * cols
        if size <= constants.CANONICAL_COMMUTATOR_LIMIT:
            # both orders applied to every canonical direction
            pi_l = block.T @ block
            pi_g = (
                self.reynolds_stack(index, np.eye(size).reshape(size, rows, cols))
                .reshape(size, size)
                .T
            )
            return float(np.linalg.norm(pi_l @ pi_g - pi_g @ pi_l, 2))
        # ||Pi_L Pi_G - Pi_G Pi_L|| = ||(I - Pi_L) Pi_G Pi_L|| for projections
        averaged = self.reynolds_stack(index, block.reshape(-1, rows, cols)).reshape(
            block.shape[0], -1
        )
        leak = averaged - (averaged @ block.T) @ block
        return float(np.linalg.norm(leak, 2))

    def perp_blocks(self) -> t.List[np.ndarray]:
        """Per-layer orthonormal bases of ``T E-perp`` inside ``T L``."""
        if "perp" not in self._cache:
            blocks = []
            for l_block, e_block, (rows, cols) in zip(
                self.subspace.blocks, self.e_blocks, self.shapes
            ):
                if e_block.shape[0] == 0:
                    blocks.append(
                        np.eye(rows * cols) if l_block is None else l_block.copy()
                    )
                elif l_block is None:
                    blocks.append(linalg.null_space(e_block).T)
                else:
                    coords = linalg.null_space((l_block @ e_block.T).T)
                    blocks.append(coords.T @ l_block)
            self._cache["perp"] = blocks
        return self._cache["perp"]

    def e_to_point(self, coeffs: np.ndarray) -> ParamPoint:
        """Point of ``T E`` with the given coordinates in the ``T E`` basis."""
        return _blocks_to_point(self.e_blocks, self.shapes, coeffs)

    def point_to_e(self, A: ParamPoint) -> np.ndarray:
        """Coordinates of the ``T E`` component of ``A``."""
        return _point_to_blocks(self.e_blocks, A)

    def perp_to_point(self, coeffs: np.ndarray) -> ParamPoint:
        """Point of ``T E-perp`` with the given coordinates."""
        return _blocks_to_point(self.perp_blocks(), self.shapes, coeffs)

    def point_to_perp(self, A: ParamPoint) -> np.ndarray:
        """Coordinates of the ``T E-perp`` component of ``A``."""
        return _point_to_blocks(self.perp_blocks(), A)

    def __repr__(self) -> str:
        return (
            f"<EquivariantStructure group={self.group.name} dim_L={self.subspace.dim} "
            f"dim_E={self.e_dim} commutator={self.commutator_norm:.2e}>"
        )


def group_action(structure: EquivariantStructure, g: int, A: ParamPoint) -> ParamPoint:
    """Layer-wise ``rho-bar(g) A_i = rho_{i+1}(g)^-1 A_i rho_i(g)``."""
    return ParamPoint(
        structure.conjugate_stack(index, g, layer)
        for index, layer in enumerate(A.layers)
    )


def reynolds(structure: EquivariantStructure, A: ParamPoint) -> ParamPoint:
    """Orthogonal projection ``Pi_G`` onto ``H_G`` by group averaging.

    :param structure: Group and architecture data
    :type structure: :class:`EquivariantStructure`
    :param A: Layers to average
    :type A: :class:`ParamPoint`
    :return: ``(1/|G|) sum_g rho-bar(g) A``
    :rtype: :class:`ParamPoint`
    """
    if A.shapes != structure.shapes:
        raise InvalidArgument(f"Shape mismatch: {A.shapes} != {structure.shapes}")
    return ParamPoint(
        structure.reynolds_stack(index, layer) for index, layer in enumerate(A.layers)
    )


def project_L(
    subspace: t.Union[AffineSubspace, EquivariantStructure], A: ParamPoint
) -> ParamPoint:
    """Orthogonal projection ``Pi_L`` of ``A`` onto ``L``."""
    if isinstance(subspace, EquivariantStructure):
        subspace = subspace.subspace
    return subspace.project(A)


def _require_compatible(structure: EquivariantStructure) -> None:
    if not structure.compatible:
        raise CompatibilityError(structure.commutator_norm)


def project_E(structure: EquivariantStructure, A: ParamPoint) -> ParamPoint:
    """Orthogonal projection ``Pi_E`` onto ``E``.

    :raise CompatibilityError: ``Pi_L`` and ``Pi_G`` do not commute
    """
    _require_compatible(structure)
    return ParamPoint(
        _project_layer(block, layer)
        for block, layer in zip(structure.e_blocks, A.layers)
    )


def project_E_perp(structure: EquivariantStructure, A: ParamPoint) -> ParamPoint:
    """Component ``Pi_L A - Pi_E A`` of ``A`` in ``T E-perp``.

    :raise CompatibilityError: ``Pi_L`` and ``Pi_G`` do not commute
    """
    return project_L(structure, A) - project_E(structure, A)


def distance_to_E(structure: EquivariantStructure, A: ParamPoint) -> float:
    """``||Pi_E-perp A||``, the distance of ``Pi_L A`` to ``E``."""
    return project_E_perp(structure, A).norm()


def check_compatibility(structure: EquivariantStructure) -> t.Tuple[bool, float]:
    """Whether ``Pi_L`` and ``Pi_G`` commute.

    Layers with at most :data:`~eqaug.constants.CANONICAL_COMMUTATOR_LIMIT`
    entries are checked by applying both products to every canonical
    direction; larger layers use the equivalent norm of
    ``(I - Pi_L) Pi_G Pi_L``.

    :return: Verdict and the commutator norm
    :rtype: Tuple[bool, float]
    """
    return structure.compatible, structure.commutator_norm


def random_point_in_E(
    structure: EquivariantStructure, rng: np.random.Generator, scale: float = 1.0
) -> ParamPoint:
    """Point of ``E`` with standard Gaussian ``T E`` coordinates.

    :param scale: Multiplier applied to the coordinates
    :type scale: float
    """
    _require_compatible(structure)
    return structure.e_to_point(scale * rng.standard_normal(structure.e_dim))


def random_perp_direction(
    structure: EquivariantStructure, rng: np.random.Generator
) -> ParamPoint:
    """Unit vector of ``T E-perp`` drawn from the projected Gaussian."""
    if structure.perp_dim == 0:
        raise InvalidArgument("T E-perp is trivial for this structure")
    shapes = structure.shapes
    while True:
        direction = project_E_perp(
            structure, ParamPoint(rng.standard_normal(shape) for shape in shapes)
        )
        norm = direction.norm()
        if norm > 0.0:
            return direction / norm


def init_equivariant(
    structure: EquivariantStructure, rng: np.random.Generator
) -> ParamPoint:
    """Gaussian initialization inside ``E``.

    Each layer gets standard Gaussian ``T E`` coordinates and is rescaled to
    Frobenius norm ``sqrt(out_dim)``, the norm of a layer whose entries have
    scale ``1/sqrt(fan_in)``.
    """
    _require_compatible(structure)
    layers = []
    for block, (rows, cols) in zip(structure.e_blocks, structure.shapes):
        coeffs = rng.standard_normal(block.shape[0])
        layer = (coeffs @ block).reshape(rows, cols)
        norm = np.linalg.norm(layer)
        if norm > 0.0:
            layer *= np.sqrt(rows) / norm
        layers.append(layer)
    return ParamPoint(layers)
