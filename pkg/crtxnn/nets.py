"""
Base networks: a one-hidden-layer ReLU regressor and a small two-conv ReLU classifier,
with hand-derived backpropagation and Adam.

Parameters of a network live in one flat float64 vector; each layer reads its
weights and biases as reshaped views of a contiguous slice, so the optimizer and the
model container only ever deal with a single array.
"""
import dataclasses
import functools
import typing

import numpy as np
from numpy.lib.stride_tricks import as_strided
from prefect.utilities.logging import get_logger

from crtxnn.seeding import rng
from crtxnn.tensor import Shape, shapes_equal

logger = get_logger("crtxnn.nets")

MLP_REGRESSOR = "mlp-regressor"
CNN_CLASSIFIER = "cnn-classifier"

MSE = "mse"
CROSS_ENTROPY = "cross-entropy"

PROBABILITY_FLOOR = 1e-12
_PREDICT_CHUNK = 256


class NetworkError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    """
    Architecture of a base network.

    Parameters
    ----------
    kind : str
        ``"mlp-regressor"`` or ``"cnn-classifier"``.
    input_shape : tuple of int
        ``(features,)`` for the regressor, ``(height, width, channels)`` for the CNN.
    output_size : int
        Regression outputs or number of classes.
    hidden : tuple of int
        Widths of the hidden dense layers (after the conv stages for the CNN).
    conv_channels : tuple of int
        Output channels of each conv layer; ignored by the regressor.
    kernel_size, pool_size : int
        Square conv kernel and max-pool window; ignored by the regressor.
    """
    kind: str
    input_shape: typing.Tuple[int, ...]
    output_size: int
    hidden: typing.Tuple[int, ...] = (16,)
    conv_channels: typing.Tuple[int, ...] = (8, 16)
    kernel_size: int = 5
    pool_size: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.kind not in (MLP_REGRESSOR, CNN_CLASSIFIER):
            raise NetworkError(f"unknown network kind {self.kind!r}")
        if self.activation != "relu":
            raise NetworkError(f"unsupported activation {self.activation!r}")
        if self.output_size < 1 or any(h < 1 for h in self.hidden):
            raise NetworkError(f"layer widths must be positive: hidden={self.hidden}, output={self.output_size}")
        if self.kind == MLP_REGRESSOR and len(self.input_shape) != 1:
            raise NetworkError(f"mlp-regressor needs a flat input shape, got {self.input_shape}")
        if self.kind == CNN_CLASSIFIER:
            if len(self.input_shape) != 3:
                raise NetworkError(f"cnn-classifier needs an (H, W, C) input shape, got {self.input_shape}")
            if self.output_size < 2:
                raise NetworkError("cnn-classifier needs at least two classes")
            _conv_geometry(self)

    @property
    def output(self) -> str:
        return "softmax" if self.kind == CNN_CLASSIFIER else "linear"

    @property
    def loss_kind(self) -> str:
        return CROSS_ENTROPY if self.kind == CNN_CLASSIFIER else MSE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "output_size": self.output_size,
            "hidden": list(self.hidden),
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "pool_size": self.pool_size,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        return cls(
            kind=data["kind"],
            input_shape=tuple(data["input_shape"]),
            output_size=int(data["output_size"]),
            hidden=tuple(data.get("hidden", (16,))),
            conv_channels=tuple(data.get("conv_channels", (8, 16))),
            kernel_size=int(data.get("kernel_size", 5)),
            pool_size=int(data.get("pool_size", 2)),
            activation=data.get("activation", "relu"),
        )


def mlp_regressor(input_size: int = 1, hidden: typing.Sequence[int] = (16,), output_size: int = 1) -> NetworkConfig:
    return NetworkConfig(kind=MLP_REGRESSOR, input_shape=(input_size,), output_size=output_size, hidden=tuple(hidden))


def cnn_classifier(
        input_shape: typing.Sequence[int],
        classes: int = 10,
        conv_channels: typing.Sequence[int] = (8, 16),
        kernel_size: int = 5,
        pool_size: int = 2,
        hidden: typing.Sequence[int] = (64,)
) -> NetworkConfig:
    return NetworkConfig(
        kind=CNN_CLASSIFIER,
        input_shape=tuple(input_shape),
        output_size=classes,
        hidden=tuple(hidden),
        conv_channels=tuple(conv_channels),
        kernel_size=kernel_size,
        pool_size=pool_size,
    )


def _conv_geometry(config: NetworkConfig) -> typing.List[typing.Tuple[int, int, int]]:
    height, width, channels = config.input_shape
    stages = []
    for out_channels in config.conv_channels:
        height -= config.kernel_size - 1
        width -= config.kernel_size - 1
        if height < 1 or width < 1:
            raise NetworkError(f"input {config.input_shape} is too small for {len(config.conv_channels)} conv stages")
        if height % config.pool_size or width % config.pool_size:
            raise NetworkError(
                f"conv output {height}x{width} is not divisible by pool size {config.pool_size} "
                f"for input {config.input_shape}"
            )
        height //= config.pool_size
        width //= config.pool_size
        channels = out_channels
        stages.append((height, width, channels))
    return stages


# Layers ######################################################################

class Dense:
    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.param_shapes = [(n_in, n_out), (n_out,)]
        self.fans = (n_in, n_out)

    def forward(self, x, params):
        weights, bias = params
        return x @ weights + bias, x

    def backward(self, grad, x, params):
        weights, _ = params
        return grad @ weights.T, [x.T @ grad, grad.sum(axis=0)]


class ReLU:
    param_shapes = []
    fans = None

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, mask, params):
        return grad * mask, []


class Conv2D:
    """Valid-padding, stride-1 convolution over HWC batches."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, kernel_size
        self.param_shapes = [(kernel_size, kernel_size, in_channels, out_channels), (out_channels,)]
        self.fans = (kernel_size * kernel_size * in_channels, kernel_size * kernel_size * out_channels)

    def _columns(self, x):
        batch, height, width, channels = x.shape
        k = self.kernel_size
        out_h, out_w = height - k + 1, width - k + 1
        s = x.strides
        windows = as_strided(
            x,
            shape=(batch, out_h, out_w, k, k, channels),
            strides=(s[0], s[1], s[2], s[1], s[2], s[3]),
            writeable=False,
        )
        return windows.reshape(batch * out_h * out_w, k * k * channels), (batch, out_h, out_w)

    def forward(self, x, params):
        weights, bias = params
        x = np.ascontiguousarray(x)
        columns, (batch, out_h, out_w) = self._columns(x)
        out = columns @ weights.reshape(-1, self.out_channels) + bias
        return out.reshape(batch, out_h, out_w, self.out_channels), (x.shape, columns)

    def backward(self, grad, cache, params):
        weights, _ = params
        input_shape, columns = cache
        k = self.kernel_size
        batch, out_h, out_w, _ = grad.shape
        grad_2d = grad.reshape(-1, self.out_channels)
        grad_weights = (columns.T @ grad_2d).reshape(weights.shape)
        grad_bias = grad_2d.sum(axis=0)
        grad_columns = (grad_2d @ weights.reshape(-1, self.out_channels).T).reshape(
            batch, out_h, out_w, k, k, self.in_channels
        )
        grad_x = np.zeros(input_shape)
        for i in range(k):
            for j in range(k):
                grad_x[:, i:i + out_h, j:j + out_w, :] += grad_columns[:, :, :, i, j, :]
        return grad_x, [grad_weights, grad_bias]


class MaxPool2D:
    param_shapes = []
    fans = None

    def __init__(self, size: int):
        self.size = size

    def _blocks(self, x):
        batch, height, width, channels = x.shape
        p = self.size
        blocks = x.reshape(batch, height // p, p, width // p, p, channels)
        return blocks.transpose(0, 1, 3, 5, 2, 4).reshape(batch, height // p, width // p, channels, p * p)

    def forward(self, x, params):
        blocks = self._blocks(x)
        winners = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, winners[..., None], axis=-1)[..., 0]
        return out, (x.shape, winners)

    def backward(self, grad, cache, params):
        input_shape, winners = cache
        batch, height, width, channels = input_shape
        p = self.size
        routed = np.zeros(winners.shape + (p * p,))
        np.put_along_axis(routed, winners[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(batch, height // p, width // p, channels, p, p).transpose(0, 1, 4, 2, 5, 3)
        return routed.reshape(input_shape), []


class Flatten:
    param_shapes = []
    fans = None

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, shape, params):
        return grad.reshape(shape), []


@functools.lru_cache(maxsize=None)
def build_layers(config: NetworkConfig) -> tuple:
    layers = []
    if config.kind == CNN_CLASSIFIER:
        channels = config.input_shape[2]
        for out_channels in config.conv_channels:
            layers += [Conv2D(channels, out_channels, config.kernel_size), ReLU(), MaxPool2D(config.pool_size)]
            channels = out_channels
        height, width, channels = _conv_geometry(config)[-1]
        layers.append(Flatten())
        width_in = height * width * channels
    else:
        width_in = config.input_shape[0]
    for width_out in config.hidden:
        layers += [Dense(width_in, width_out), ReLU()]
        width_in = width_out
    layers.append(Dense(width_in, config.output_size))
    return tuple(layers)


@functools.lru_cache(maxsize=None)
def _param_slices(config: NetworkConfig):
    offset = 0
    slices = []
    for layer in build_layers(config):
        layer_slices = []
        for shape in layer.param_shapes:
            count = int(np.prod(shape))
            layer_slices.append((slice(offset, offset + count), shape))
            offset += count
        slices.append(layer_slices)
    return slices, offset


def parameter_count(config: NetworkConfig) -> int:
    return _param_slices(config)[1]


def _unpack(config: NetworkConfig, params: np.ndarray) -> typing.List[typing.List[np.ndarray]]:
    slices, _ = _param_slices(config)
    return [[params[s].reshape(shape) for s, shape in layer_slices] for layer_slices in slices]


# Networks ####################################################################

@dataclasses.dataclass
class BaseNetwork:
    id: int
    config: NetworkConfig
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = parameter_count(self.config)
        if self.params.shape != (expected,):
            raise NetworkError(f"network {self.id} needs {expected} parameters, got {self.params.shape}")

    @property
    def loss_kind(self) -> str:
        return self.config.loss_kind


def init_network(config: NetworkConfig, seed: int, id: int = 0) -> BaseNetwork:
    """
    Initialize a network with every weight and bias drawn from
    U(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))) of its layer.
    """
    generator = rng(seed, "init")
    slices, count = _param_slices(config)
    params = np.empty(count)
    for layer, layer_slices in zip(build_layers(config), slices):
        if layer.fans is None:
            continue
        limit = np.sqrt(6.0 / sum(layer.fans))
        for s, _ in layer_slices:
            params[s] = generator.uniform(-limit, limit, size=s.stop - s.start)
    return BaseNetwork(id=id, config=config, params=params)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_batch(net: BaseNetwork, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != net.config.input_shape:
        raise NetworkError(
            f"shape mismatch: network {net.id} expects inputs of shape {net.config.input_shape}, got {X.shape[1:]}"
        )
    return X


def _forward_batch(net: BaseNetwork, X: np.ndarray):
    params = _unpack(net.config, net.params)
    caches = []
    out = X
    for layer, layer_params in zip(build_layers(net.config), params):
        out, cache = layer.forward(out, layer_params)
        caches.append(cache)
    if net.config.output == "softmax":
        out = _softmax(out)
    return out, caches, params


def predict_batch(net: BaseNetwork, X: np.ndarray) -> np.ndarray:
    X = _check_batch(net, X)
    if len(X) == 0:
        return np.zeros((0, net.config.output_size))
    return np.concatenate([
        _forward_batch(net, X[start:start + _PREDICT_CHUNK])[0]
        for start in range(0, len(X), _PREDICT_CHUNK)
    ])


def forward(net: BaseNetwork, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not shapes_equal(x.shape, net.config.input_shape):
        raise NetworkError(
            f"shape mismatch: network {net.id} expects {Shape(net.config.input_shape)}, got {Shape(x.shape)}"
        )
    out = predict_batch(net, x[None])[0]
    out.setflags(write=False)
    return out


# Losses ######################################################################

def _check_pair(pred: np.ndarray, target: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise NetworkError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    return pred, target


def _check_one_hot(target: np.ndarray):
    rows = target.reshape(-1, target.shape[-1])
    if not (np.all((rows == 0) | (rows == 1)) and np.all(rows.sum(axis=1) == 1)):
        raise NetworkError("cross-entropy target is not one-hot")


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def loss_cross_entropy(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = _check_pair(pred, target)
    _check_one_hot(target)
    true_probability = float(pred[np.argmax(target)])
    return float(-np.log(max(true_probability, PROBABILITY_FLOOR)))


def _sample_losses(outputs: np.ndarray, Y: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind == MSE:
        return np.mean((outputs - Y).reshape(len(Y), -1) ** 2, axis=1)
    true_probability = outputs[np.arange(len(Y)), Y.argmax(axis=1)]
    return -np.log(np.maximum(true_probability, PROBABILITY_FLOOR))


def per_sample_errors(net: BaseNetwork, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """
    The scalar error of each sample that reflection thresholds against epsilon:
    ``|h - y|`` for scalar regression, ``||h - y||`` for vector regression and the
    cross-entropy value for classification.
    """
    outputs = predict_batch(net, X)
    return sample_errors(outputs, np.asarray(Y, dtype=np.float64), net.loss_kind)


def sample_errors(outputs: np.ndarray, Y: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind == CROSS_ENTROPY:
        return _sample_losses(outputs, Y, loss_kind)
    return np.linalg.norm((outputs - Y).reshape(len(Y), -1), axis=1)


def sample_losses(outputs: np.ndarray, Y: np.ndarray, loss_kind: str) -> np.ndarray:
    return _sample_losses(outputs, np.asarray(Y, dtype=np.float64), loss_kind)


def dataset_loss(net: BaseNetwork, X: np.ndarray, Y: np.ndarray) -> float:
    if len(X) == 0:
        return 0.0
    return float(np.mean(sample_losses(predict_batch(net, X), Y, net.loss_kind)))


# Gradients ###################################################################

def loss_and_gradients(
        net: BaseNetwork,
        X: np.ndarray,
        Y: np.ndarray,
        loss_kind: typing.Optional[str] = None
) -> typing.Tuple[float, np.ndarray]:
    """
    Mean loss over the batch and its gradient with respect to ``net.params``.
    """
    loss_kind = loss_kind or net.loss_kind
    X = _check_batch(net, X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (len(X), net.config.output_size):
        raise NetworkError(f"shape mismatch: targets {Y.shape} for {len(X)} outputs of size {net.config.output_size}")
    if loss_kind == CROSS_ENTROPY and net.config.output != "softmax":
        raise NetworkError("cross-entropy needs a softmax output")
    outputs, caches, params = _forward_batch(net, X)
    batch = len(X)
    if loss_kind == MSE:
        if net.config.output == "softmax":
            raise NetworkError("mse gradients are only derived for linear outputs")
        residual = outputs - Y
        loss = float(np.mean(residual ** 2))
        grad = 2.0 * residual / residual.size
    elif loss_kind == CROSS_ENTROPY:
        _check_one_hot(Y)
        losses = _sample_losses(outputs, Y, CROSS_ENTROPY)
        loss = float(np.mean(losses))
        unclamped = outputs[np.arange(batch), Y.argmax(axis=1)] >= PROBABILITY_FLOOR
        grad = (outputs - Y) * unclamped[:, None] / batch
    else:
        raise NetworkError(f"unknown loss kind {loss_kind!r}")

    layer_grads = []
    for layer, cache, layer_params in zip(reversed(build_layers(net.config)), reversed(caches), reversed(params)):
        grad, grads = layer.backward(grad, cache, layer_params)
        layer_grads.append(grads)
    flat = np.concatenate([g.ravel() for grads in reversed(layer_grads) for g in grads])
    return loss, flat


def gradients(net: BaseNetwork, x: np.ndarray, y: np.ndarray, loss_kind: typing.Optional[str] = None) -> np.ndarray:
    """Gradient of the single-sample loss with respect to every parameter."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return loss_and_gradients(net, x[None], y.reshape(1, -1), loss_kind)[1]


# Optimization ################################################################

@dataclasses.dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), learning_rate=learning_rate, **kwargs)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> typing.Tuple[np.ndarray, AdamState]:
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise NetworkError(
            f"length mismatch: params {len(params)}, grads {len(grads)}, moments {len(state.m)}/{len(state.v)}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads ** 2
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, dataclasses.replace(state, m=m, v=v, t=t)


@dataclasses.dataclass
class TrainReport:
    losses: typing.List[float]
    final_loss: float
    epochs: int
    seed: int


def train(
        net: BaseNetwork,
        X: np.ndarray,
        Y: np.ndarray,
        epochs: int,
        batch_size: int = 0,
        learning_rate: float = 1e-3,
        seed: int = 0
) -> TrainReport:
    """
    Train ``net`` in place with Adam.

    Parameters
    ----------
    batch_size : int
        Mini-batch size; 0 (or anything >= the dataset size) trains full-batch.
    seed : int
        Seeds the mini-batch order. Two calls with the same network, data and seed
        produce identical parameters and reports.
    """
    if len(X) == 0:
        raise NetworkError("cannot train on an empty dataset")
    X = _check_batch(net, X)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) != len(Y):
        raise NetworkError(f"shape mismatch: {len(X)} inputs but {len(Y)} targets")
    Y = Y.reshape(len(Y), -1)

    n = len(X)
    full_batch = batch_size <= 0 or batch_size >= n
    order_rng = rng(seed, "shuffle")
    state = AdamState.fresh(len(net.params), learning_rate=learning_rate)
    losses = []
    for epoch in range(epochs):
        if full_batch:
            batches = [slice(None)]
        else:
            order = order_rng.permutation(n)
            batches = [order[start:start + batch_size] for start in range(0, n, batch_size)]
        epoch_loss = 0.0
        for batch in batches:
            loss, grads = loss_and_gradients(net, X[batch], Y[batch])
            net.params, state = adam_step(net.params, grads, state)
            epoch_loss += loss * (n if full_batch else len(batch))
        losses.append(epoch_loss / n)
        if epoch % 500 == 0:
            logger.debug("network %d epoch %d loss %.6g", net.id, epoch, losses[-1])
    final_loss = dataset_loss(net, X, Y)
    return TrainReport(losses=losses, final_loss=final_loss, epochs=epochs, seed=seed)
