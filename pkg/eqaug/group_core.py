"""Finite groups, orthogonal representations and exact uniform averaging.

Every group is finite, so integrals against the Haar measure are plain
uniform averages over the elements. Elements are dense indices
``0 .. order - 1`` and index ``0`` is always the identity.
"""

import typing as t

import numpy as np

from .errors import InvalidArgument

__all__ = (
    "FiniteGroup",
    "Representation",
    "cyclic_group",
    "trivial_rep",
    "rotation_rep_on_grid",
    "row_shift_rep_on_grid",
    "permutation_rep",
    "haar_average",
)


class FiniteGroup:
    """A finite group given by its Cayley table.

    Parameters
    ----------
    cayley: array-like
        ``order x order`` table, ``cayley[a][b]`` is the index of ``a * b``.
    name: :class:`str`
        Human readable name, used in logs and reports.

    Attributes
    ----------
    cayley: :class:`numpy.ndarray`
        Read-only multiplication table.
    inverses: :class:`numpy.ndarray`
        ``inverses[g]`` is the index of ``g^-1``.
    name: :class:`str`
        Name of the group.
    """

    __slots__ = ("cayley", "inverses", "name")

    identity = 0

    def __init__(self, cayley: t.Any, name: str = "G") -> None:
        """Initialize the group and check the identity and inverse axioms.

        :param cayley: Multiplication table
        :type cayley: array-like
        :param name: Name of the group
        :type name: str
        :raise InvalidArgument: The table is not the table of a group with
            identity ``0``
        """
        table = np.array(cayley, dtype=np.intp)
        if table.ndim != 2 or table.shape[0] != table.shape[1] or table.size == 0:
            raise InvalidArgument("The Cayley table must be a non-empty square")
        order = table.shape[0]
        if table.min() < 0 or table.max() >= order:
            raise InvalidArgument("The Cayley table references unknown elements")

        elements = np.arange(order)
        if not (
            np.array_equal(table[0], elements) and np.array_equal(table[:, 0], elements)
        ):
            raise InvalidArgument("Element 0 is not the identity of the table")

        rows, cols = np.nonzero(table == 0)
        if not np.array_equal(rows, elements):
            raise InvalidArgument("Some elements have no unique inverse")
        inverses = np.empty(order, dtype=np.intp)
        inverses[rows] = cols

        table.setflags(write=False)
        inverses.setflags(write=False)
        self.cayley = table
        self.inverses = inverses
        self.name = name

    @property
    def order(self) -> int:
        """Number of elements of the group."""
        return int(self.cayley.shape[0])

    def elements(self) -> range:
        """Iterate over the element indices in index order.

        :return: ``range(order)``
        :rtype: range
        """
        return range(self.order)

    def multiply(self, a: int, b: int) -> int:
        """Index of the product ``a * b``.

        :param a: Left factor
        :type a: int
        :param b: Right factor
        :type b: int
        :return: Index of the product
        :rtype: int
        """
        return int(self.cayley[a, b])

    def inverse(self, g: int) -> int:
        """Index of ``g^-1``."""
        return int(self.inverses[g])

    def is_associative(self) -> bool:
        """Check associativity exhaustively over every triple.

        :return: Whether ``(ab)c = a(bc)`` for all ``a, b, c``
        :rtype: bool
        """
        left = self.cayley[self.cayley]
        right = self.cayley[
            np.arange(self.order)[:, None, None], self.cayley[None, :, :]
        ]
        return bool(np.array_equal(left, right))

    def check(self) -> t.List[str]:
        """Verify the group axioms not already enforced at construction.

        :return: Names of the violated axioms (``"associativity"``,
            ``"cancellation"``), empty for a group
        :rtype: List[str]
        """
        violated = []
        if not self.is_associative():
            violated.append("associativity")
        elements = np.arange(self.order)
        rows_ok = np.all(np.sort(self.cayley, axis=1) == elements[None, :])
        cols_ok = np.all(np.sort(self.cayley, axis=0) == elements[:, None])
        if not (rows_ok and cols_ok):
            violated.append("cancellation")
        return violated

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FiniteGroup):
            return NotImplemented
        return np.array_equal(self.cayley, other.cayley)

    def __hash__(self) -> int:
        return hash(self.cayley.tobytes())

    def __repr__(self) -> str:
        return f"<FiniteGroup {self.name} order={self.order}>"


class Representation:
    """An orthogonal representation of a finite group.

    Matrices are stored densely. When every matrix is a permutation matrix
    the index permutations are kept as well, so that the action on vectors
    and on linear maps can be computed by indexing.

    Parameters
    ----------
    group: :class:`FiniteGroup`
        The represented group.
    matrices: array-like
        ``order x dim x dim`` array, one matrix per element.
    name: :class:`str`
        Name of the representation.

    Attributes
    ----------
    group: :class:`FiniteGroup`
        The represented group.
    matrices: :class:`numpy.ndarray`
        Read-only stack of the representing matrices.
    permutations: Optional[:class:`numpy.ndarray`]
        ``order x dim`` index table with ``(rho(g) x)[i] = x[permutations[g, i]]``
        when all matrices are permutation matrices, else ``None``.
    name: :class:`str`
        Name of the representation.
    """

    __slots__ = ("group", "matrices", "permutations", "name")

    def __init__(self, group: FiniteGroup, matrices: t.Any, name: str = "rho") -> None:
        """Initialize the representation.

        :param group: Represented group
        :type group: :class:`FiniteGroup`
        :param matrices: One square matrix per element
        :type matrices: array-like
        :param name: Name of the representation
        :type name: str
        :raise InvalidArgument: Shapes are wrong or the identity is not
            represented by the identity matrix
        """
        mats = np.array(matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[0] != group.order:
            raise InvalidArgument(
                f"Expected {group.order} square matrices, got shape {mats.shape}"
            )
        if mats.shape[1] != mats.shape[2] or mats.shape[1] == 0:
            raise InvalidArgument("Representation matrices must be square")
        if not np.allclose(mats[0], np.eye(mats.shape[1]), rtol=0.0, atol=1e-12):
            raise InvalidArgument("The identity must be represented by I")

        mats.setflags(write=False)
        self.group = group
        self.matrices = mats
        self.permutations = _as_permutations(mats)
        self.name = name

    @property
    def dim(self) -> int:
        """Dimension of the represented space."""
        return int(self.matrices.shape[1])

    def __call__(self, g: int) -> np.ndarray:
        return self.matrices[g]

    def apply(self, g: int, x: np.ndarray) -> np.ndarray:
        """Apply ``rho(g)`` along the last axis of ``x``.

        :param g: Group element
        :type g: int
        :param x: Vector, or batch of vectors stacked on the first axis
        :type x: :class:`numpy.ndarray`
        :return: The transformed vector(s)
        :rtype: :class:`numpy.ndarray`
        """
        if self.permutations is not None:
            return x[..., self.permutations[g]]
        return x @ self.matrices[g].T

    def homomorphism_residual(self) -> float:
        """Largest entry of ``rho(gh) - rho(g) rho(h)`` over all pairs."""
        worst = 0.0
        for g in self.group.elements():
            products = self.matrices[g] @ self.matrices
            expected = self.matrices[self.group.cayley[g]]
            worst = max(worst, float(np.max(np.abs(products - expected))))
        return worst

    def orthogonality_residual(self) -> float:
        """Largest entry of ``rho(g)^T rho(g) - I`` over all elements."""
        gram = np.einsum("gki,gkj->gij", self.matrices, self.matrices)
        return float(np.max(np.abs(gram - np.eye(self.dim))))

    def is_trivial(self) -> bool:
        """Whether every element acts as the identity."""
        return bool(np.all(self.matrices == np.eye(self.dim)))

    def __repr__(self) -> str:
        return f"<Representation {self.name} of {self.group.name} dim={self.dim}>"


def _as_permutations(mats: np.ndarray) -> t.Optional[np.ndarray]:
    """Return index permutations if every matrix is a permutation matrix."""
    if not np.all((mats == 0.0) | (mats == 1.0)):
        return None
    if not (np.all(mats.sum(axis=1) == 1.0) and np.all(mats.sum(axis=2) == 1.0)):
        return None
    perms = np.argmax(mats, axis=2).astype(np.intp)
    perms.setflags(write=False)
    return perms


def _from_generator(
    group: FiniteGroup, generator: np.ndarray, name: str
) -> Representation:
    """Representation of a cyclic group sending element ``k`` to ``P^k``."""
    dim = generator.shape[0]
    perms = np.empty((group.order, dim), dtype=np.intp)
    perms[0] = np.arange(dim)
    for k in range(1, group.order):
        perms[k] = perms[k - 1][generator]
    if not np.array_equal(perms[-1][generator], np.arange(dim)):
        raise InvalidArgument(
            f"The generator does not have order dividing {group.order}"
        )
    mats = np.zeros((group.order, dim, dim))
    rows = np.arange(dim)
    for k in range(group.order):
        mats[k, rows, perms[k]] = 1.0
    return Representation(group, mats, name)


def _require_cyclic(group: FiniteGroup, order: t.Optional[int] = None) -> None:
    if order is not None and group.order != order:
        raise InvalidArgument(f"Expected a group of order {order}, got {group.order}")
    if group != cyclic_group(group.order):
        raise InvalidArgument("The action is only defined for cyclic groups")


def cyclic_group(n: int) -> FiniteGroup:
    """Build the cyclic group ``Z/nZ``.

    :param n: Order of the group
    :type n: int
    :return: The group with ``cayley[a][b] = (a + b) mod n``
    :rtype: :class:`FiniteGroup`
    :raise InvalidArgument: ``n < 1``
    """
    if int(n) != n or n < 1:
        raise InvalidArgument(f"A cyclic group needs a positive order, got {n}")
    elements = np.arange(n)
    return FiniteGroup((elements[:, None] + elements[None, :]) % n, name=f"C{n}")


def trivial_rep(group: FiniteGroup, dim: int) -> Representation:
    """Representation sending every element to the ``dim x dim`` identity.

    :param group: Represented group
    :type group: :class:`FiniteGroup`
    :param dim: Dimension of the space
    :type dim: int
    :return: The trivial representation
    :rtype: :class:`Representation`
    """
    if dim < 1:
        raise InvalidArgument(f"Dimension must be positive, got {dim}")
    mats = np.broadcast_to(np.eye(dim), (group.order, dim, dim))
    return Representation(group, mats, name="trivial")


def grid_index(row: int, col: int, channel: int, width: int, channels: int) -> int:
    """Flat index of a pixel channel in the row-major ``h x w x c`` layout."""
    return (row * width + col) * channels + channel


def rotation_rep_on_grid(
    group: FiniteGroup, height: int, width: int, channels: int
) -> Representation:
    """C4 acting on flattened ``h x w x c`` images by 90 degree rotations.

    The generator sends pixel ``(r, c)`` to ``(c, h - 1 - r)`` in every
    channel.

    :param group: The cyclic group of order 4
    :type group: :class:`FiniteGroup`
    :param height: Grid height
    :type height: int
    :param width: Grid width, must equal the height
    :type width: int
    :param channels: Number of channels
    :type channels: int
    :return: The permutation representation
    :rtype: :class:`Representation`
    :raise InvalidArgument: The grid is not square or the group is not C4
    """
    if height != width:
        raise InvalidArgument(f"Cannot rotate a {height}x{width} grid")
    if height < 1 or channels < 1:
        raise InvalidArgument("Grid dimensions must be positive")
    _require_cyclic(group, 4)

    # target (r, c) receives the value of source (h - 1 - c, r)
    rows, cols, chans = np.meshgrid(
        np.arange(height), np.arange(width), np.arange(channels), indexing="ij"
    )
    source = grid_index(height - 1 - cols, rows, chans, width, channels)
    return _from_generator(group, source.reshape(-1), "rotate90")


def row_shift_rep_on_grid(
    group: FiniteGroup, height: int, width: int, channels: int
) -> Representation:
    """Cyclic group of order ``height`` shifting image rows circularly.

    The generator sends row ``r`` to row ``r + 1 mod h``.

    :param group: Cyclic group whose order equals the height
    :type group: :class:`FiniteGroup`
    :param height: Grid height
    :type height: int
    :param width: Grid width
    :type width: int
    :param channels: Number of channels
    :type channels: int
    :return: The permutation representation
    :rtype: :class:`Representation`
    """
    _require_cyclic(group, height)
    rows, cols, chans = np.meshgrid(
        np.arange(height), np.arange(width), np.arange(channels), indexing="ij"
    )
    source = grid_index((rows - 1) % height, cols, chans, width, channels)
    return _from_generator(group, source.reshape(-1), "row_shift")


def permutation_rep(group: FiniteGroup, generator: t.Sequence[int]) -> Representation:
    """Cyclic group acting by powers of a coordinate permutation.

    :param group: A cyclic group
    :type group: :class:`FiniteGroup`
    :param generator: Image of the generator, ``(rho(1) x)[i] = x[generator[i]]``
    :type generator: Sequence[int]
    :return: The permutation representation
    :rtype: :class:`Representation`
    :raise InvalidArgument: Not a permutation, or its order does not divide
        the group order
    """
    _require_cyclic(group)
    perm = np.asarray(generator, dtype=np.intp)
    if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
        raise InvalidArgument("The generator must be a permutation of 0..dim-1")
    return _from_generator(group, perm, "permutation")


def haar_average(group: FiniteGroup, f: t.Callable[[int], t.Any]) -> np.ndarray:
    """Average of ``f`` against the uniform (Haar) measure of the group.

    Terms are summed in element index order.

    :param group: The group to average over
    :type group: :class:`FiniteGroup`
    :param f: Matrix valued function of the element index
    :type f: Callable[[int], array-like]
    :return: ``(1/|G|) sum_g f(g)``
    :rtype: :class:`numpy.ndarray`
    :raise InvalidArgument: ``f`` returns values of different shapes
    """
    total: t.Optional[np.ndarray] = None
    for g in group.elements():
        value = np.asarray(f(g), dtype=np.float64)
        if total is None:
            total = value.copy()
        elif value.shape != total.shape:
            raise InvalidArgument(
                f"Shape mismatch in average: {value.shape} != {total.shape}"
            )
        else:
            total += value
    assert total is not None
    return total / group.order
