"""
Datasets: the four function-approximation targets, MNIST IDX and CIFAR-10 binary
parsers, and the mix / split / take helpers used to build experiments.
"""
import dataclasses
import gzip
import pathlib
import struct
import typing

import numpy as np
import pandas as pd
from prefect.utilities.logging import get_logger

from crtxnn.cortex import CLASSIFICATION, REGRESSION, LabeledDataset
from crtxnn.seeding import rng

logger = get_logger("crtxnn.data")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_IMAGE_SIZE = (28, 28)
CIFAR_RECORD_BYTES = 1 + 3 * 1024
CLASSES = 10

PathLike = typing.Union[str, pathlib.Path]


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class RecordLengthError(DataFormatError):
    pass


class BadLabelError(DataFormatError):
    pass


class ImageSizeError(DataFormatError):
    pass


# Function approximation ######################################################

def _piecewise(x: np.ndarray) -> np.ndarray:
    return np.where(
        x < 0,
        x ** 4 + x ** 3 - 0.6 * x ** 2,
        x ** 5 + x ** 4 - 0.5 * x ** 3,
    )


@dataclasses.dataclass(frozen=True)
class FunctionSpec:
    id: str
    evaluate: typing.Callable[[np.ndarray], np.ndarray]
    domain: typing.Tuple[float, float] = (-1.0, 1.0)

    def with_domain(self, low: float, high: float) -> "FunctionSpec":
        return dataclasses.replace(self, domain=(float(low), float(high)))


FUNCTIONS = {
    "linear": FunctionSpec("linear", lambda x: x),
    "cubic": FunctionSpec("cubic", lambda x: x ** 3 - 0.2 * x - 0.35),
    "quartic": FunctionSpec("quartic", lambda x: x ** 4 + 0.2 * x ** 3 - 0.67 * x ** 2),
    "piecewise": FunctionSpec("piecewise", _piecewise),
}


def gen_function_dataset(spec: FunctionSpec, n: int, seed: int) -> LabeledDataset:
    """``n`` noiseless pairs (x, f(x)), x uniform on the spec's domain."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    low, high = spec.domain
    x = rng(seed, "function", spec.id).uniform(low, high, size=(n, 1))
    return LabeledDataset(inputs=x, targets=spec.evaluate(x), kind=REGRESSION)


def function_grid(spec: FunctionSpec, points: int) -> np.ndarray:
    low, high = spec.domain
    # the domain is half-open on the right
    return np.linspace(low, high, points, endpoint=False)[:, None]


def export_function_csv(dataset: LabeledDataset) -> pd.DataFrame:
    return pd.DataFrame({"x": dataset.inputs[:, 0], "y": dataset.targets[:, 0]})


# Image formats ###############################################################

def _read_bytes(path: PathLike) -> bytes:
    path = pathlib.Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _one_hot(labels: np.ndarray) -> np.ndarray:
    encoded = np.zeros((len(labels), CLASSES))
    encoded[np.arange(len(labels)), labels] = 1.0
    return encoded


def _idx_header(raw: bytes, magic: int, dimensions: int, name: str) -> typing.Tuple[int, ...]:
    header_bytes = 4 * (1 + dimensions)
    if len(raw) < 4:
        raise TruncatedFileError(f"{name}: file ends at byte {len(raw)} inside the magic number (offset 0)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{name}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    if len(raw) < header_bytes:
        raise TruncatedFileError(f"{name}: header needs {header_bytes} bytes, file ends at offset {len(raw)}")
    return struct.unpack(f">{dimensions}I", raw[4:header_bytes])


def read_idx_labels(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    (count,) = _idx_header(raw, IDX_LABEL_MAGIC, 1, str(path))
    end = 8 + count
    if len(raw) < end:
        raise TruncatedFileError(f"{path}: {count} labels need bytes up to offset {end}, file ends at offset {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)
    if np.any(labels >= CLASSES):
        bad = int(np.flatnonzero(labels >= CLASSES)[0])
        raise BadLabelError(f"{path}: label {labels[bad]} at offset {8 + bad} is not a digit")
    return labels.astype(np.int64)


def read_idx_images(path: PathLike, size: typing.Optional[typing.Tuple[int, int]] = MNIST_IMAGE_SIZE) -> np.ndarray:
    """Images as ``[count, rows, cols, 1]`` in [0, 1]; with ``size`` set, any other geometry is rejected."""
    raw = _read_bytes(path)
    count, rows, cols = _idx_header(raw, IDX_IMAGE_MAGIC, 3, str(path))
    if size is not None and (rows, cols) != tuple(size):
        raise ImageSizeError(
            f"{path}: images are {rows}x{cols} (header offsets 8 and 12), expected {size[0]}x{size[1]}"
        )
    end = 16 + count * rows * cols
    if len(raw) < end:
        raise TruncatedFileError(
            f"{path}: {count} images of {rows}x{cols} need bytes up to offset {end}, file ends at offset {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols, 1).astype(np.float64) / 255.0


def load_mnist(images_path: PathLike, labels_path: PathLike) -> LabeledDataset:
    """
    Read an IDX image/label file pair (optionally gzipped) into ``[28, 28, 1]`` inputs
    in [0, 1] and one-hot ``[10]`` targets.

    Raises
    ------
    BadMagicError, TruncatedFileError, CountMismatchError, BadLabelError, ImageSizeError
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} declares {len(images)} images at offset 4 but "
            f"{labels_path} declares {len(labels)} labels at offset 4"
        )
    logger.info("loaded %d MNIST samples from %s", len(labels), images_path)
    return LabeledDataset(inputs=images, targets=_one_hot(labels), kind=CLASSIFICATION)


def load_cifar10(paths: typing.Sequence[PathLike]) -> LabeledDataset:
    """
    Read CIFAR-10 binary batches: 3073-byte records of one label byte followed by the
    1024 red, 1024 green and 1024 blue bytes of a 32x32 image.

    Raises
    ------
    RecordLengthError, BadLabelError
    """
    images, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise RecordLengthError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}; "
                f"last complete record ends at offset {len(raw) - len(raw) % CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        bad = np.flatnonzero(records[:, 0] >= CLASSES)
        if bad.size:
            raise BadLabelError(
                f"{path}: label byte {records[bad[0], 0]} at offset {int(bad[0]) * CIFAR_RECORD_BYTES} exceeds 9"
            )
        labels.append(records[:, 0].astype(np.int64))
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0)
    if not images:
        raise DataFormatError("no CIFAR-10 batch files given")
    labels = np.concatenate(labels)
    logger.info("loaded %d CIFAR-10 samples from %d file(s)", len(labels), len(paths))
    return LabeledDataset(inputs=np.concatenate(images), targets=_one_hot(labels), kind=CLASSIFICATION)


# Mixing and splitting ########################################################

def mix(datasets: typing.Sequence[LabeledDataset], seed: int) -> typing.List[typing.Tuple[np.ndarray, np.ndarray]]:
    """Concatenate the samples of every dataset and shuffle them with a seeded order."""
    if len(datasets) == 0:
        raise ValueError("nothing to mix")
    pairs = [pair for dataset in datasets for pair in dataset.pairs()]
    order = rng(seed, "mix").permutation(len(pairs))
    return [pairs[i] for i in order]


def split(dataset: LabeledDataset, train_fraction: float, seed: int) -> typing.Tuple[LabeledDataset, LabeledDataset]:
    """Seeded disjoint split into floor(f*n) training and n - floor(f*n) test samples."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(np.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"splitting {n} samples at {train_fraction} leaves one side empty")
    order = rng(seed, "split").permutation(n)
    return dataset.subset(np.sort(order[:n_train])), dataset.subset(np.sort(order[n_train:]))


def take(dataset: LabeledDataset, n: typing.Optional[int], seed: int) -> LabeledDataset:
    """The first ``n`` samples after a seeded shuffle; everything when ``n`` is None or too large."""
    if n is None or n >= len(dataset):
        return dataset
    order = rng(seed, "take").permutation(len(dataset))
    return dataset.subset(np.sort(order[:n]))
