"""
Experiment configuration: one TOML file per experiment, validated in full before
anything runs.
"""
import copy
import dataclasses
import hashlib
import json
import os
import pathlib
import typing

import toml

from crtxnn import cortex, nets
from crtxnn.data import FUNCTIONS
from crtxnn.tensor import Shape

FNAPPROX = "fnapprox"
MIXED_IMAGES = "mixed-images"
VERIFY_BOUND = "verify-bound"
EXPERIMENTS = (FNAPPROX, MIXED_IMAGES, VERIFY_BOUND)

MNIST_ENV = "CRTXNN_MNIST_DIR"
CIFAR_ENV = "CRTXNN_CIFAR_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]

# Keys that do not change what gets learned.
_DIGEST_EXCLUDED = ("name", "output_dir", "checkpoint")


class ConfigError(ValueError):
    """Every problem found in a configuration, reported together."""

    def __init__(self, problems: typing.Sequence[str], source: str = "configuration"):
        self.problems = list(problems)
        self.source = source
        super().__init__(f"{source} is invalid:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclasses.dataclass
class DataConfig:
    function: str = "piecewise"
    n: int = 2000
    domain: typing.Tuple[float, float] = (-1.0, 1.0)
    test_fraction: float = 0.2
    plot_points: int = 1000
    mnist_dir: str = ""
    cifar_dir: str = ""
    take_train: typing.Optional[int] = None
    take_test: typing.Optional[int] = None


@dataclasses.dataclass
class BoundConfig:
    t_min: float = 2.0
    t_max: float = 10.0
    t_step: float = 0.5
    n_min: int = 3
    n_max: int = 100
    k: typing.Optional[typing.List[int]] = None
    samples: int = 1000
    distribution: str = "uniform"
    agreement_z: float = 3.0

    def t_values(self) -> typing.List[float]:
        count = int(round((self.t_max - self.t_min) / self.t_step)) + 1
        return [self.t_min + i * self.t_step for i in range(count)]

    def n_values(self) -> typing.List[int]:
        return list(range(self.n_min, self.n_max + 1))


@dataclasses.dataclass
class ExperimentConfig:
    experiment: str
    name: str
    seed: int
    output_dir: str
    checkpoint: bool = False
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    networks: typing.Dict[str, nets.NetworkConfig] = dataclasses.field(default_factory=dict)
    train: typing.Dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    train_overrides: typing.Dict[str, typing.Dict[str, typing.Any]] = dataclasses.field(default_factory=dict)
    reflection: typing.Dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    bound: BoundConfig = dataclasses.field(default_factory=BoundConfig)

    @property
    def output_path(self) -> pathlib.Path:
        return pathlib.Path(self.output_dir)

    def sense_key(self, network: str) -> cortex.SenseKey:
        config = self.networks[network]
        return cortex.SenseKey(Shape(config.input_shape), Shape((config.output_size,)))

    def net_configs(self) -> typing.Dict[cortex.SenseKey, nets.NetworkConfig]:
        return {self.sense_key(name): config for name, config in self.networks.items()}

    def train_params(self) -> typing.Dict[cortex.SenseKey, cortex.TrainParams]:
        params = {}
        for name in self.networks:
            settings = dict(self.train, **self.train_overrides.get(name, {}))
            params[self.sense_key(name)] = cortex.TrainParams(seed=self.seed, **settings)
        return params

    def reflection_params(self) -> cortex.ReflectionParams:
        return cortex.ReflectionParams(seed=self.seed, **self.reflection)

    def to_dict(self) -> dict:
        """Canonical plain-data form; ``load_config`` of its TOML dump gives the same config."""
        data = dataclasses.asdict(self.data)
        data["domain"] = list(self.data.domain)
        data = {k: v for k, v in data.items() if v is not None}
        bound = {k: v for k, v in dataclasses.asdict(self.bound).items() if v is not None}
        train = dataclasses.asdict(cortex.TrainParams(**self.train))
        train.pop("seed")
        train.update({name: dict(values) for name, values in self.train_overrides.items()})
        reflection = dataclasses.asdict(cortex.ReflectionParams(**self.reflection))
        reflection.pop("seed")
        reflection = {k: v for k, v in reflection.items() if v is not None}
        return {
            "experiment": self.experiment,
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "checkpoint": self.checkpoint,
            "data": data,
            "network": {name: config.to_dict() for name, config in self.networks.items()},
            "train": train,
            "reflection": reflection,
            "bound": bound,
        }


def config_digest(config: typing.Union[ExperimentConfig, dict]) -> str:
    """SHA-256 of the canonical JSON of everything that affects the learned model."""
    data = config.to_dict() if isinstance(config, ExperimentConfig) else copy.deepcopy(config)
    for key in _DIGEST_EXCLUDED:
        data.pop(key, None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Validation ##################################################################

_TRAIN_KEYS = {"epochs": int, "batch_size": int, "learning_rate": float}
_REFLECTION_KEYS = {
    "mode": str, "delta": float, "epsilon": float, "k": int, "epochs": int, "learning_rate": float, "rounds": int,
    "kmeans_restarts": int, "kmeans_max_iter": int, "tree_max_depth": int,
    "tree_min_samples_leaf": int, "tree_features": str,
}


def _typed(value, kind, where: str, problems: typing.List[str]):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        problems.append(f"{where} must be {kind.__name__}, got {value!r}")
        return None
    return value


def _section(raw: dict, name: str, problems: typing.List[str]) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        problems.append(f"[{name}] must be a table")
        return {}
    return value


def _read_data(raw: dict, problems: typing.List[str]) -> DataConfig:
    section = _section(raw, "data", problems)
    defaults = DataConfig()
    kinds = {"function": str, "n": int, "test_fraction": float, "plot_points": int,
             "mnist_dir": str, "cifar_dir": str, "take_train": int, "take_test": int}
    values = {}
    for key, value in section.items():
        if key == "domain":
            if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)):
                problems.append(f"data.domain must be [low, high], got {value!r}")
            elif not value[0] < value[1]:
                problems.append(f"data.domain must have low < high, got {value!r}")
            else:
                values["domain"] = (float(value[0]), float(value[1]))
        elif key in kinds:
            checked = _typed(value, kinds[key], f"data.{key}", problems)
            if checked is not None:
                values[key] = checked
        else:
            problems.append(f"unknown key data.{key}")
    data = dataclasses.replace(defaults, **values)
    if data.function not in FUNCTIONS:
        problems.append(f"data.function must be one of {sorted(FUNCTIONS)}, got {data.function!r}")
    if data.n < 2:
        problems.append(f"data.n must be >= 2, got {data.n}")
    if not 0 <= data.test_fraction < 1:
        problems.append(f"data.test_fraction must be in [0, 1), got {data.test_fraction}")
    if data.plot_points < 2:
        problems.append(f"data.plot_points must be >= 2, got {data.plot_points}")
    for key in ("take_train", "take_test"):
        if getattr(data, key) is not None and getattr(data, key) < 1:
            problems.append(f"data.{key} must be >= 1, got {getattr(data, key)}")
    return data


def _read_networks(raw: dict, problems: typing.List[str]) -> typing.Dict[str, nets.NetworkConfig]:
    networks = {}
    for name, table in _section(raw, "network", problems).items():
        if not isinstance(table, dict):
            problems.append(f"[network.{name}] must be a table")
            continue
        try:
            networks[name] = nets.NetworkConfig.from_dict(table)
        except KeyError as missing:
            problems.append(f"network.{name} is missing {missing}")
        except (nets.NetworkError, TypeError, ValueError) as error:
            problems.append(f"network.{name}: {error}")
    keys = {}
    for name, config in networks.items():
        key = cortex.SenseKey(Shape(config.input_shape), Shape((config.output_size,)))
        if key in keys:
            problems.append(f"network.{name} and network.{keys[key]} share the sense key {key}")
        keys[key] = name
    return networks


def _read_train(raw: dict, networks: typing.Iterable[str], problems: typing.List[str]):
    section = _section(raw, "train", problems)
    train, overrides = {}, {}
    for key, value in section.items():
        if key in _TRAIN_KEYS:
            checked = _typed(value, _TRAIN_KEYS[key], f"train.{key}", problems)
            if checked is not None:
                train[key] = checked
        elif isinstance(value, dict):
            if key not in networks:
                problems.append(f"[train.{key}] overrides an undefined network")
            overrides[key] = {}
            for inner, inner_value in value.items():
                if inner not in _TRAIN_KEYS:
                    problems.append(f"unknown key train.{key}.{inner}")
                    continue
                checked = _typed(inner_value, _TRAIN_KEYS[inner], f"train.{key}.{inner}", problems)
                if checked is not None:
                    overrides[key][inner] = checked
        else:
            problems.append(f"unknown key train.{key}")
    for where, values in [("train", train)] + [(f"train.{k}", v) for k, v in overrides.items()]:
        if values.get("epochs", 1) < 1:
            problems.append(f"{where}.epochs must be >= 1")
        if values.get("batch_size", 0) < 0:
            problems.append(f"{where}.batch_size must be >= 0")
        if values.get("learning_rate", 1.0) <= 0:
            problems.append(f"{where}.learning_rate must be > 0")
    return train, overrides


def _read_reflection(raw: dict, problems: typing.List[str]) -> dict:
    reflection = {}
    for key, value in _section(raw, "reflection", problems).items():
        if key not in _REFLECTION_KEYS:
            problems.append(f"unknown key reflection.{key}")
            continue
        checked = _typed(value, _REFLECTION_KEYS[key], f"reflection.{key}", problems)
        if checked is not None:
            reflection[key] = checked
    try:
        cortex.ReflectionParams(**reflection)
    except cortex.CortexError as error:
        problems.extend(f"reflection: {p}" for p in str(error).split("; "))
    for key in ("epochs", "rounds", "kmeans_restarts", "kmeans_max_iter", "tree_max_depth", "tree_min_samples_leaf"):
        if key in reflection and reflection[key] < (0 if key == "rounds" else 1):
            problems.append(f"reflection.{key} is out of range: {reflection[key]}")
    return reflection


def _read_bound(raw: dict, problems: typing.List[str]) -> BoundConfig:
    kinds = {"t_min": float, "t_max": float, "t_step": float, "n_min": int, "n_max": int,
             "samples": int, "distribution": str, "agreement_z": float}
    values = {}
    for key, value in _section(raw, "bound", problems).items():
        if key == "k":
            if not (isinstance(value, list) and value and all(isinstance(v, int) and v >= 1 for v in value)):
                problems.append(f"bound.k must be a list of positive integers, got {value!r}")
            else:
                values["k"] = list(value)
        elif key in kinds:
            checked = _typed(value, kinds[key], f"bound.{key}", problems)
            if checked is not None:
                values[key] = checked
        else:
            problems.append(f"unknown key bound.{key}")
    bound = dataclasses.replace(BoundConfig(), **values)
    if not 1 < bound.t_min <= bound.t_max:
        problems.append(f"bound needs 1 < t_min <= t_max, got {bound.t_min}, {bound.t_max}")
    if bound.t_step <= 0:
        problems.append(f"bound.t_step must be > 0, got {bound.t_step}")
    if not 1 <= bound.n_min <= bound.n_max:
        problems.append(f"bound needs 1 <= n_min <= n_max, got {bound.n_min}, {bound.n_max}")
    if bound.samples < 100:
        problems.append(f"bound.samples must be >= 100, got {bound.samples}")
    if not bound.agreement_z > 0:
        problems.append(f"bound.agreement_z must be > 0, got {bound.agreement_z}")
    if bound.distribution not in ("uniform", "truncnormal"):
        problems.append(f"bound.distribution must be 'uniform' or 'truncnormal', got {bound.distribution!r}")
    return bound


def _check_networks_for_experiment(config: ExperimentConfig, problems: typing.List[str]):
    if config.experiment == FNAPPROX:
        if len(config.networks) != 1:
            problems.append(f"fnapprox needs exactly one [network.*] table, got {len(config.networks)}")
        for name, network in config.networks.items():
            if network.kind != nets.MLP_REGRESSOR or network.input_shape != (1,) or network.output_size != 1:
                problems.append(f"network.{name} must be a 1 -> 1 mlp-regressor for fnapprox")
    elif config.experiment == MIXED_IMAGES:
        for name, shape in (("mnist", (28, 28, 1)), ("cifar", (32, 32, 3))):
            network = config.networks.get(name)
            if network is None:
                problems.append(f"mixed-images needs a [network.{name}] table")
            elif network.input_shape != shape or network.output_size != 10:
                problems.append(f"network.{name} must map {Shape(shape)} to 10 classes")


def parse_config(raw: dict, source: str = "configuration") -> ExperimentConfig:
    problems: typing.List[str] = []
    known = {"experiment", "name", "seed", "output_dir", "checkpoint", "data", "network", "train", "reflection", "bound"}
    problems.extend(f"unknown key {key}" for key in raw if key not in known)

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        problems.append(f"experiment must be one of {list(EXPERIMENTS)}, got {experiment!r}")
    seed = raw.get("seed")
    if seed is None:
        problems.append("seed is required")
    else:
        seed = _typed(seed, int, "seed", problems)
        if seed is not None and seed < 0:
            problems.append(f"seed must be >= 0, got {seed}")
    name = _typed(raw.get("name", str(experiment)), str, "name", problems)
    output_dir = _typed(raw.get("output_dir", ""), str, "output_dir", problems)
    if not output_dir:
        problems.append("output_dir is required")
    checkpoint = _typed(raw.get("checkpoint", False), bool, "checkpoint", problems)

    data = _read_data(raw, problems)
    networks = _read_networks(raw, problems)
    train, overrides = _read_train(raw, networks, problems)
    reflection = _read_reflection(raw, problems)
    bound = _read_bound(raw, problems)

    config = ExperimentConfig(
        experiment=experiment, name=name, seed=seed, output_dir=output_dir, checkpoint=bool(checkpoint),
        data=data, networks=networks, train=train, train_overrides=overrides,
        reflection=reflection, bound=bound,
    )
    if experiment in (FNAPPROX, MIXED_IMAGES):
        _check_networks_for_experiment(config, problems)
    if problems:
        raise ConfigError(problems, source)
    return config


def apply_overrides(raw: dict, overrides: typing.Optional[typing.Mapping[str, typing.Any]]) -> dict:
    """Command-line overrides: ``seed``, ``output_dir`` and ``take`` (caps every sample count)."""
    raw = copy.deepcopy(raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "seed" in overrides:
        raw["seed"] = overrides["seed"]
    if "output_dir" in overrides:
        raw["output_dir"] = str(overrides["output_dir"])
    if "take" in overrides:
        data = raw.setdefault("data", {})
        take = int(overrides["take"])
        data["take_train"] = min(take, data.get("take_train", take))
        data["take_test"] = min(take, data.get("take_test", take))
        if raw.get("experiment") == FNAPPROX:
            data["n"] = min(take, data.get("n", DataConfig.n))
    return raw


def load_config(
        path: typing.Union[str, pathlib.Path],
        overrides: typing.Optional[typing.Mapping[str, typing.Any]] = None
) -> ExperimentConfig:
    """
    Read and validate an experiment TOML file.

    Raises
    ------
    ConfigError
        Listing every problem found, including an unreadable file.
    """
    path = pathlib.Path(path)
    try:
        raw = toml.load(str(path))
    except FileNotFoundError:
        raise ConfigError([f"file not found: {path}"], str(path))
    except toml.TomlDecodeError as error:
        raise ConfigError([f"TOML syntax: {error}"], str(path))
    return parse_config(apply_overrides(raw, overrides), str(path))


def dump_config(config: ExperimentConfig) -> str:
    return toml.dumps(config.to_dict())


# Paths #######################################################################

def _find(directory: pathlib.Path, name: str) -> typing.Optional[pathlib.Path]:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    return None


def dataset_paths(config: ExperimentConfig) -> typing.Dict[str, typing.Any]:
    """
    Resolve the MNIST and CIFAR-10 files of a mixed-images config. Empty directory
    settings fall back to ``CRTXNN_MNIST_DIR`` and ``CRTXNN_CIFAR_DIR``.

    Raises
    ------
    ConfigError
        Naming every missing directory or file.
    """
    problems = []
    mnist_dir = pathlib.Path(config.data.mnist_dir or os.environ.get(MNIST_ENV, ""))
    cifar_dir = pathlib.Path(config.data.cifar_dir or os.environ.get(CIFAR_ENV, ""))
    resolved: typing.Dict[str, typing.Any] = {}
    for label, directory, env in (("MNIST", mnist_dir, MNIST_ENV), ("CIFAR-10", cifar_dir, CIFAR_ENV)):
        if str(directory) in ("", ".") or not directory.is_dir():
            problems.append(f"{label} directory {str(directory)!r} does not exist (set data.*_dir or {env})")
    if not problems:
        for key, name in MNIST_FILES.items():
            resolved[f"mnist_{key}"] = _find(mnist_dir, name)
        resolved["cifar_train"] = [_find(cifar_dir, name) for name in CIFAR_TRAIN_FILES]
        resolved["cifar_test"] = [_find(cifar_dir, name) for name in CIFAR_TEST_FILES]
        for key, name in MNIST_FILES.items():
            if resolved[f"mnist_{key}"] is None:
                problems.append(f"missing MNIST file {mnist_dir / name}")
        for names, key in ((CIFAR_TRAIN_FILES, "cifar_train"), (CIFAR_TEST_FILES, "cifar_test")):
            for name, found in zip(names, resolved[key]):
                if found is None:
                    problems.append(f"missing CIFAR-10 file {cifar_dir / name}")
    if problems:
        raise ConfigError(problems, config.name)
    return resolved
