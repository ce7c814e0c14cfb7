import numpy as np
import pytest

from crtxnn.tensor import Shape, TensorError, flatten, make_tensor, reshape, shape_of, shapes_equal


class TestShape:

    def test_rejects_non_positive_dimensions(self):
        with pytest.raises(TensorError):
            Shape((28, 0, 1))

    def test_rejects_empty_shape(self):
        with pytest.raises(TensorError):
            Shape(())

    def test_size_and_str(self):
        shape = Shape.of(28, 28, 1)
        assert shape.size == 784
        assert str(shape) == "28x28x1"

    @pytest.mark.parametrize("text", ["28x28x1", "28,28,1", " 28x28x1 "])
    def test_parse(self, text):
        assert Shape.parse(text) == Shape((28, 28, 1))

    def test_parse_garbage(self):
        with pytest.raises(TensorError):
            Shape.parse("28xa")

    def test_is_hashable_by_value(self):
        assert {Shape((1,)): "a"}[Shape.of(1)] == "a"


class TestMakeTensor:

    def test_builds_read_only_tensor(self):
        tensor = make_tensor(Shape((2, 2)), [1, 2, 3, 4])
        assert tensor.shape == (2, 2)
        assert tensor.dtype == np.float64
        with pytest.raises(ValueError):
            tensor[0, 0] = 5.0

    def test_length_mismatch(self):
        with pytest.raises(TensorError, match="length"):
            make_tensor(Shape((2, 2)), [1, 2, 3])

    def test_non_finite_value_names_its_index(self):
        with pytest.raises(TensorError, match="2"):
            make_tensor(Shape((4,)), [0.0, 1.0, np.nan, 3.0])

    def test_does_not_alias_input(self):
        values = np.arange(4.0)
        tensor = make_tensor(Shape((4,)), values)
        values[0] = 100.0
        assert tensor[0] == 0.0


def test_flatten_round_trip():
    tensor = make_tensor(Shape((2, 3)), np.arange(6.0))
    flat = flatten(tensor)
    assert flat.shape == (6,)
    np.testing.assert_array_equal(reshape(flat, Shape((2, 3))), tensor)


def test_shape_of_and_shapes_equal():
    tensor = make_tensor(Shape((28, 28, 1)), np.zeros(784))
    assert shape_of(tensor) == Shape((28, 28, 1))
    assert shapes_equal(Shape((28, 28, 1)), (28, 28, 1))
    assert not shapes_equal(Shape((28, 28)), Shape((28, 28, 1)))
