"""Datasets: synthetic image tasks, IDX files and orbit expansion.

Images are stored flattened in the row-major ``h x w x c`` layout used by
:func:`~eqaug.group_core.rotation_rep_on_grid`, with pixel values in
``[0, 1]``.
"""

import gzip
import struct
import typing as t
import warnings

import numpy as np

from .errors import FormatError, InvalidArgument
from .group_core import Representation
from .tensor_net import LabeledSample

__all__ = (
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "Dataset",
    "synth_invariant_task",
    "synth_asymmetric_task",
    "read_idx",
    "write_idx",
    "symmetrize",
    "downsample",
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

IDX_CLASSES = 10


class Dataset:
    """An immutable empirical distribution.

    Parameters
    ----------
    samples: Iterable[:class:`~eqaug.tensor_net.LabeledSample`]
        The samples.
    input_shape: Tuple[:class:`int`, ...]
        ``(h, w, c)`` for images, ``(dim,)`` otherwise.
    num_classes: Optional[:class:`int`]
        Number of classes when targets are one-hot, ``None`` for regression
        targets.

    Attributes
    ----------
    samples: Tuple[:class:`~eqaug.tensor_net.LabeledSample`, ...]
        The samples.
    """

    __slots__ = ("samples", "input_shape", "num_classes")

    def __init__(
        self,
        samples: t.Iterable[LabeledSample],
        input_shape: t.Sequence[int],
        num_classes: t.Optional[int] = None,
    ) -> None:
        """Initialize the dataset and check that the samples are consistent.

        :raise InvalidArgument: Samples of different shapes, or targets that
            are not one-hot when ``num_classes`` is given
        """
        self.samples = tuple(samples)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = num_classes

        size = int(np.prod(self.input_shape))
        for index, sample in enumerate(self.samples):
            if sample.input.size != size:
                raise InvalidArgument(
                    f"Sample {index} has {sample.input.size} input values, "
                    f"expected {size}"
                )
            if sample.target.shape != self.samples[0].target.shape:
                raise InvalidArgument(f"Sample {index} has a target of another shape")
            if num_classes is not None and not (
                sample.target.shape == (num_classes,)
                and np.isclose(sample.target.sum(), 1.0)
                and np.all((sample.target == 0.0) | (sample.target == 1.0))
            ):
                raise InvalidArgument(
                    f"Sample {index} does not have a one-hot target"
                )

    @classmethod
    def from_arrays(
        cls,
        images: np.ndarray,
        labels: np.ndarray,
        num_classes: int,
    ) -> "Dataset":
        """Build a classification dataset from stacked images and labels.

        :param images: ``n x h x w`` or ``n x h x w x c`` pixel values
        :type images: :class:`numpy.ndarray`
        :param labels: ``n`` class indices
        :type labels: :class:`numpy.ndarray`
        :param num_classes: Number of classes
        :type num_classes: int
        :return: The dataset
        :rtype: :class:`Dataset`
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[..., None]
        targets = np.eye(num_classes)[np.asarray(labels, dtype=np.intp)]
        samples = (
            LabeledSample(image.reshape(-1), target)
            for image, target in zip(images, targets)
        )
        return cls(samples, images.shape[1:], num_classes)

    @property
    def inputs(self) -> np.ndarray:
        """``n x dim`` stacked inputs."""
        if not self.samples:
            return np.zeros((0, int(np.prod(self.input_shape))))
        return np.stack([sample.input.reshape(-1) for sample in self.samples])

    @property
    def labels(self) -> np.ndarray:
        """Class index of every sample."""
        if self.num_classes is None:
            raise InvalidArgument("Regression datasets have no labels")
        return np.array([int(np.argmax(sample.target)) for sample in self.samples])

    def images(self) -> np.ndarray:
        """Inputs reshaped to ``n x h x w x c``."""
        return self.inputs.reshape(len(self), *self.input_shape)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> t.Iterator[LabeledSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> LabeledSample:
        return self.samples[index]

    def __repr__(self) -> str:
        return (
            f"<Dataset n={len(self)} shape={self.input_shape} "
            f"classes={self.num_classes}>"
        )


def _check_task(n: int, h: int) -> None:
    if n < 0:
        raise InvalidArgument(f"The sample count must be non-negative, got {n}")
    if h < 2:
        raise InvalidArgument(f"Images need at least 2 pixels per side, got {h}")


def _center_orbit_mask(h: int) -> np.ndarray:
    start = (h - 2) // 2
    block = np.zeros((h, h), dtype=bool)
    block[start : start + 2, start : start + 2] = True
    # np.rot90 realizes the same rotation up to direction; the union is the orbit
    return block | np.rot90(block, 1) | np.rot90(block, 2) | np.rot90(block, 3)


def synth_invariant_task(n: int, h: int, seed: int) -> Dataset:
    """Two-class task whose labels are invariant under 90 degree rotations.

    Pixels are uniform in ``[0, 1]``. A sample is of class ``1`` when the mean
    intensity over the rotation orbit of the central ``2 x 2`` block exceeds
    the mean intensity of the outer ring of pixels not in that orbit, or
    ``0.5`` when the ring is empty.

    :param n: Number of samples
    :type n: int
    :param h: Side of the square images
    :type h: int
    :param seed: Seed of the generator
    :type seed: int
    :return: ``h x h x 1`` images with 2 classes
    :rtype: :class:`Dataset`
    """
    _check_task(n, h)
    images = np.random.default_rng(seed).random((n, h, h))
    center = _center_orbit_mask(h)
    ring = np.zeros((h, h), dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    ring &= ~center
    center_mean = images[:, center].mean(axis=1)
    ring_mean = images[:, ring].mean(axis=1) if ring.any() else np.full(n, 0.5)
    labels = (center_mean > ring_mean).astype(np.intp)
    return Dataset.from_arrays(images, labels, 2)


def synth_asymmetric_task(n: int, h: int, seed: int) -> Dataset:
    """Four-class task whose label is the brightest corner quadrant.

    Quadrants are numbered top-left, top-right, bottom-right, bottom-left, so
    a 90 degree rotation of the image moves the label to the next quadrant.
    For odd sides the middle row and column belong to no quadrant.

    :param n: Number of samples
    :type n: int
    :param h: Side of the square images
    :type h: int
    :param seed: Seed of the generator
    :type seed: int
    :return: ``h x h x 1`` images with 4 classes
    :rtype: :class:`Dataset`
    """
    _check_task(n, h)
    images = np.random.default_rng(seed).random((n, h, h))
    half = h // 2
    quadrants = np.stack(
        [
            images[:, :half, :half].mean(axis=(1, 2)),
            images[:, :half, h - half :].mean(axis=(1, 2)),
            images[:, h - half :, h - half :].mean(axis=(1, 2)),
            images[:, h - half :, :half].mean(axis=(1, 2)),
        ],
        axis=1,
    )
    return Dataset.from_arrays(images, np.argmax(quadrants, axis=1), 4)


def _open(path: str) -> t.BinaryIO:
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")  # type: ignore
    return open(path, "rb")


def _read_payload(path: str) -> bytes:
    with _open(path) as file:
        return file.read()


def _unpack(data: bytes, fmt: str, offset: int, path: str) -> t.Tuple[int, ...]:
    size = struct.calcsize(fmt)
    if len(data) < offset + size:
        raise FormatError(f"{path}: truncated header", len(data))
    return struct.unpack_from(fmt, data, offset)


def read_idx(
    images_path: str, labels_path: str, limit: t.Optional[int] = None
) -> Dataset:
    """Read an image file and a label file in IDX format.

    Both files start with a big-endian 32 bit magic number and item count;
    the image file adds the row and column counts. Payloads are unsigned
    bytes. Files ending in ``.gz`` are decompressed on the fly.

    :param images_path: Path of the ``0x00000803`` image file
    :type images_path: str
    :param labels_path: Path of the ``0x00000801`` label file
    :type labels_path: str
    :param limit: Number of leading samples to keep, all when ``None``
    :type limit: Optional[int]
    :return: ``rows x cols x 1`` images in ``[0, 1]`` with 10 classes
    :rtype: :class:`Dataset`
    :raise FormatError: Bad magic, a file shorter than its header announces,
        count mismatch or label out of range
    """
    images_data = _read_payload(images_path)
    labels_data = _read_payload(labels_path)

    (magic,) = _unpack(images_data, ">I", 0, images_path)
    if magic != IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic number {magic:#010x}", 0)
    count, rows, cols = _unpack(images_data, ">III", 4, images_path)
    (magic,) = _unpack(labels_data, ">I", 0, labels_path)
    if magic != LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic number {magic:#010x}", 0)
    (label_count,) = _unpack(labels_data, ">I", 4, labels_path)
    if label_count != count:
        raise FormatError(
            f"{images_path} holds {count} images but {labels_path} "
            f"holds {label_count} labels",
            4,
        )

    if limit is None:
        limit = count
    elif limit < 0:
        raise InvalidArgument(f"limit must be non-negative, got {limit}")
    elif limit > count:
        warnings.warn(f"limit {limit} exceeds the {count} samples available")
        limit = count

    # the whole payload announced by the headers must be present
    image_size = rows * cols
    if len(images_data) < 16 + count * image_size:
        raise FormatError(f"{images_path}: truncated pixel data", len(images_data))
    if len(labels_data) < 8 + count:
        raise FormatError(f"{labels_path}: truncated label data", len(labels_data))

    pixels = np.frombuffer(
        images_data, dtype=np.uint8, count=limit * image_size, offset=16
    )
    labels = np.frombuffer(labels_data, dtype=np.uint8, count=limit, offset=8)
    bad = np.nonzero(labels >= IDX_CLASSES)[0]
    if bad.size:
        raise FormatError(
            f"{labels_path}: label {labels[bad[0]]} out of range", 8 + int(bad[0])
        )
    images = pixels.reshape(limit, rows, cols).astype(np.float64) / 255.0
    return Dataset.from_arrays(images, labels, IDX_CLASSES)


def write_idx(dataset: Dataset, images_path: str, labels_path: str) -> None:
    """Write a single channel classification dataset in IDX format.

    Pixel values are rounded to the nearest multiple of ``1/255``, so
    datasets read by :func:`read_idx` are written back byte for byte. The
    headers announce ``len(dataset)`` items, whatever file the dataset was
    read from.

    :param dataset: ``h x w x 1`` images with at most 256 classes
    :type dataset: :class:`Dataset`
    :param images_path: Destination of the image file
    :type images_path: str
    :param labels_path: Destination of the label file
    :type labels_path: str
    :raise InvalidArgument: Multi-channel images or regression targets
    """
    if len(dataset.input_shape) != 3 or dataset.input_shape[2] != 1:
        raise InvalidArgument("Only single channel images can be written")
    if dataset.num_classes is None or dataset.num_classes > 256:
        raise InvalidArgument("Only classification datasets can be written")
    rows, cols, _ = dataset.input_shape
    count = len(dataset)
    pixels = (
        np.rint(np.clip(dataset.inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
        if count
        else np.zeros(0, dtype=np.uint8)
    )
    labels = dataset.labels.astype(np.uint8) if count else np.zeros(0, dtype=np.uint8)
    with open(images_path, "wb") as file:
        file.write(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols))
        file.write(pixels.tobytes())
    with open(labels_path, "wb") as file:
        file.write(struct.pack(">II", LABELS_MAGIC, count))
        file.write(labels.tobytes())


def symmetrize(
    dataset: Dataset, rep_in: Representation, rep_out: Representation
) -> Dataset:
    """Orbit expansion ``{(rho_in(g) x, rho_out(g) y)}`` of a dataset.

    Samples are ordered element-major: all samples transformed by element
    ``0``, then by element ``1``, and so on.

    :param dataset: The dataset to expand
    :type dataset: :class:`Dataset`
    :param rep_in: Action on inputs
    :type rep_in: :class:`~eqaug.group_core.Representation`
    :param rep_out: Action on targets
    :type rep_out: :class:`~eqaug.group_core.Representation`
    :return: ``|G| n`` samples
    :rtype: :class:`Dataset`
    :raise InvalidArgument: Representations of different groups or of the
        wrong dimension
    """
    if rep_in.group != rep_out.group:
        raise InvalidArgument("Both representations must be of the same group")
    if not len(dataset):
        return dataset
    if rep_in.dim != dataset.samples[0].input.size:
        raise InvalidArgument("The input representation has the wrong dimension")
    if rep_out.dim != dataset.samples[0].target.size:
        raise InvalidArgument("The output representation has the wrong dimension")
    samples = (
        LabeledSample(
            rep_in.apply(g, sample.input.reshape(-1)),
            rep_out.apply(g, sample.target.reshape(-1)),
        )
        for g in rep_in.group.elements()
        for sample in dataset.samples
    )
    return Dataset(samples, dataset.input_shape, dataset.num_classes)


def downsample(dataset: Dataset, factor: int) -> Dataset:
    """Average non-overlapping ``factor x factor`` pixel blocks.

    Block averaging commutes with 90 degree rotations of square images.

    :param dataset: Image dataset
    :type dataset: :class:`Dataset`
    :param factor: Block side, must divide the image sides
    :type factor: int
    :return: The smaller images
    :rtype: :class:`Dataset`
    """
    if len(dataset.input_shape) != 3:
        raise InvalidArgument("Only image datasets can be downsampled")
    rows, cols, channels = dataset.input_shape
    if factor < 1 or rows % factor or cols % factor:
        raise InvalidArgument(
            f"Factor {factor} does not divide a {rows}x{cols} image"
        )
    if factor == 1 or not len(dataset):
        return dataset
    images = dataset.images().reshape(
        len(dataset), rows // factor, factor, cols // factor, factor, channels
    )
    pooled = images.mean(axis=(2, 4))
    samples = (
        LabeledSample(image.reshape(-1), sample.target)
        for image, sample in zip(pooled, dataset.samples)
    )
    return Dataset(samples, pooled.shape[1:], dataset.num_classes)
