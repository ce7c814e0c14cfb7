"""
Dense float64 arrays with explicit shapes. The (input shape, output shape) pair of a
sample is the routing key the sensory stage partitions on, so ``Shape`` is a small
hashable value type rather than a bare tuple.
"""
import dataclasses
import typing

import numpy as np


class TensorError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Shape:
    dims: typing.Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0:
            raise TensorError("shape must have at least one dimension")
        for position, dim in enumerate(dims):
            if dim < 1:
                raise TensorError(f"dimension {position} of shape {dims} is {dim}, must be >= 1")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, *dims: int) -> "Shape":
        return cls(tuple(dims))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self) -> int:
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.dims)

    @classmethod
    def parse(cls, text: str) -> "Shape":
        """Parse ``"28x28x1"`` or ``"28,28,1"``."""
        parts = [part for part in text.replace(",", "x").split("x") if part.strip()]
        try:
            return cls(tuple(int(part) for part in parts))
        except ValueError:
            raise TensorError(f"cannot parse shape {text!r}")


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def make_tensor(shape: typing.Union[Shape, typing.Sequence[int]], values: typing.Iterable[float]) -> np.ndarray:
    """
    Build an immutable row-major tensor owning a copy of ``values``.

    Raises
    ------
    TensorError
        If the number of values does not match the shape, or a value is NaN/Inf.
    """
    shape = shape if isinstance(shape, Shape) else Shape(tuple(shape))
    flat = np.array(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64).ravel()
    if flat.size != shape.size:
        raise TensorError(f"length mismatch: shape {shape} needs {shape.size} values, got {flat.size}")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise TensorError(f"non-finite value {flat[bad[0]]} at index {int(bad[0])}")
    return _freeze(flat.reshape(shape.dims).copy())


def shape_of(tensor: np.ndarray) -> Shape:
    return Shape(tuple(tensor.shape))


def flatten(tensor: np.ndarray) -> np.ndarray:
    return _freeze(np.array(tensor, dtype=np.float64).reshape(-1))


def reshape(tensor: np.ndarray, shape: typing.Union[Shape, typing.Sequence[int]]) -> np.ndarray:
    shape = shape if isinstance(shape, Shape) else Shape(tuple(shape))
    return make_tensor(shape, np.asarray(tensor).ravel())


def shapes_equal(a: typing.Union[Shape, typing.Sequence[int]], b: typing.Union[Shape, typing.Sequence[int]]) -> bool:
    a_dims = a.dims if isinstance(a, Shape) else tuple(a)
    b_dims = b.dims if isinstance(b, Shape) else tuple(b)
    return len(a_dims) == len(b_dims) and all(x == y for x, y in zip(a_dims, b_dims))
